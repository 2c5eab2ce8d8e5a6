"""Training loop, held-out evaluation and alpha sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Iterator

import numpy as np

from .data import ActivationBatch, SyntheticSpec, SyntheticStream, iter_dump_rows, normalize, read_dump_header
from .kernels import DEFAULT_BLOCK_SIZE
from .losses import LossBreakdown, loss_and_grads, sse
from .model import (BilinearModel, ModelDims, ShapeError, encode, init_model, save_checkpoint)
from .optim import OptimConfig, alpha_at, lr_at
from .optim import step as optim_step
from .topk import (TopKModel, init_topk, normalize_decoder, quadratic_error, topk_forward,
                   topk_loss_and_grads)

log = logging.getLogger(__name__)

EVAL_FRACTION = 0.05
METRIC_COLUMNS = ("step", "error", "density", "total", "lr", "alpha")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d_in: int = 16
    d_lat: int = 256
    d_mix: int | None = None
    variant: str = "vanilla"
    alpha: float = 0.1
    optim: OptimConfig = field(default_factory=OptimConfig)
    data_path: str | None = None
    synthetic: SyntheticSpec | None = None
    batch_size: int = 512
    log_every: int = 16
    checkpoint: str | None = None
    seed: int = 0
    k: int = 50
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 (density needs two samples), got {self.batch_size}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.variant in ("mixed", "combined") and self.d_mix is None:
            raise ValueError(f"variant {self.variant!r} needs d_mix")
        if self.variant != "topk":
            ModelDims(self.d_in, self.d_lat, self.d_mix if self.variant in ("mixed", "combined") else None)
        if self.synthetic is not None and self.synthetic.d_in != self.d_in:
            raise ShapeError(f"synthetic data has d_in={self.synthetic.d_in}, model expects {self.d_in}")

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.d_in, self.d_lat, self.d_mix if self.variant in ("mixed", "combined") else None)

    def with_(self, **changes) -> "TrainConfig":
        optim_keys = {f.name for f in fields(OptimConfig)}
        optim = replace(self.optim, **{k: v for k, v in changes.items() if k in optim_keys})
        rest = {k: v for k, v in changes.items() if k not in optim_keys}
        return replace(self, optim=optim, **rest)


@dataclass
class TrainReport:
    records: list[dict] = field(default_factory=list)
    final: LossBreakdown | None = None

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for r in self.records:
            writer.writerow([r["step"]] + [repr(float(r[c])) for c in METRIC_COLUMNS[1:]])
        return buf.getvalue()


# -- data plumbing -------------------------------------------------------------

class ArraySource:
    """In-memory rows split into a training stream and a held-out tail."""

    def __init__(self, rows):
        batch = normalize(np.asarray(rows))
        n = len(batch)
        if n < 2:
            raise ValueError("need at least 2 non-zero rows of data")
        self.rows = batch.rows
        self.n_eval = max(1, int(math.ceil(EVAL_FRACTION * n))) if n >= 4 else 0
        self.n_train = n - self.n_eval

    @property
    def d_in(self) -> int:
        return self.rows.shape[1]

    def train_batches(self, batch_size: int) -> Iterator[np.ndarray]:
        pos = 0
        while True:
            idx = (pos + np.arange(batch_size)) % self.n_train
            yield self.rows[idx]
            pos = (pos + batch_size) % self.n_train

    def eval_batches(self, batch_size: int) -> Iterator[ActivationBatch]:
        rows = self.rows[self.n_train:] if self.n_eval else self.rows
        for start in range(0, len(rows), batch_size):
            yield ActivationBatch(rows[start:start + batch_size])


class DumpSource:
    """Streams a BACT dump; the last 5% of rows are never trained on."""

    def __init__(self, path, d_in: int | None = None):
        self.path = path
        header = read_dump_header(path, d_in)
        if header.n_rows < 2:
            raise ValueError(f"{path}: need at least 2 rows of data")
        self.d_in = header.d_in
        self.n_eval = max(1, int(math.ceil(EVAL_FRACTION * header.n_rows))) if header.n_rows >= 4 else 0
        self.n_train = header.n_rows - self.n_eval

    def train_batches(self, batch_size: int) -> Iterator[np.ndarray]:
        carry = np.zeros((0, self.d_in), np.float32)
        while True:
            for rows in iter_dump_rows(self.path, batch_size, 0, self.n_train):
                rows = normalize(rows).rows
                carry = np.concatenate([carry, rows]) if len(carry) else rows
                while len(carry) >= batch_size:
                    yield carry[:batch_size]
                    carry = carry[batch_size:]

    def eval_batches(self, batch_size: int) -> Iterator[ActivationBatch]:
        start = self.n_train if self.n_eval else 0
        for rows in iter_dump_rows(self.path, batch_size, start):
            yield normalize(rows)


class SyntheticSource:
    """Synthetic stream: training batches first, then a held-out tail of the same stream."""

    def __init__(self, spec: SyntheticSpec, n_train: int):
        self.spec = spec
        self.d_in = spec.d_in
        self.n_train = n_train
        self.n_eval = max(256, int(math.ceil(EVAL_FRACTION / (1 - EVAL_FRACTION) * n_train)))
        self._stream = SyntheticStream(spec)
        self._drawn = 0
        self._eval = None

    @property
    def truth(self):
        return self._stream.truth

    def train_batches(self, batch_size: int) -> Iterator[np.ndarray]:
        while self._drawn < self.n_train:
            take = min(batch_size, self.n_train - self._drawn)
            self._drawn += take
            yield self._stream.take(take).rows
        raise RuntimeError("synthetic training stream exhausted")

    def eval_batches(self, batch_size: int) -> Iterator[ActivationBatch]:
        if self._eval is None:
            # skip whatever the trainer did not consume so the held-out tail is fixed
            while self._drawn < self.n_train:
                take = min(1 << 14, self.n_train - self._drawn)
                self._stream.take_raw(take)
                self._drawn += take
            self._eval = self._stream.take(self.n_eval).rows
        for start in range(0, len(self._eval), batch_size):
            yield ActivationBatch(self._eval[start:start + batch_size])


def make_source(config: TrainConfig, rows=None):
    if rows is not None:
        source = ArraySource(rows)
    elif config.data_path is not None:
        source = DumpSource(config.data_path, config.d_in)
    elif config.synthetic is not None:
        source = SyntheticSource(config.synthetic, max(config.optim.steps, 1) * config.batch_size)
    else:
        raise ValueError("no training data: set data_path or synthetic")
    if source.d_in != config.d_in:
        raise ShapeError(f"data has d_in={source.d_in}, config expects {config.d_in}")
    return source


# -- training ------------------------------------------------------------------

def _init(config: TrainConfig):
    if config.variant == "topk":
        return init_topk(config.d_in, config.d_lat, config.k, seed=config.seed)
    return init_model(config.dims, config.variant, seed=config.seed)


def train(config: TrainConfig, rows=None, source=None) -> tuple[BilinearModel | TopKModel, TrainReport]:
    """Train from scratch; deterministic given ``config.seed`` and the data."""
    source = source or make_source(config, rows)
    model = _init(config)
    report = TrainReport()
    opt = config.optim
    batches = source.train_batches(config.batch_size)
    for t in range(opt.steps):
        x = next(batches)
        alpha = alpha_at(t, config.alpha, opt)
        if isinstance(model, TopKModel):
            err, grads = topk_loss_and_grads(model, x)
            terms = LossBreakdown(err, 0.0, err)
        else:
            terms, grads = loss_and_grads(model, x, alpha)
        if not (math.isfinite(terms.total) and all(np.all(np.isfinite(g)) for g in grads.values())):
            raise TrainingDivergedError(f"non-finite loss at step {t}: error={terms.error} "
                                        f"density={terms.density} total={terms.total}")
        model = model.replace(**optim_step(model.params(), grads, t, opt))
        if isinstance(model, TopKModel):
            model = normalize_decoder(model)
        if t % config.log_every == 0 or t == opt.steps - 1:
            report.records.append({"step": t, "error": terms.error, "density": terms.density,
                                   "total": terms.total, "lr": lr_at(t, opt), "alpha": alpha})
    if opt.steps:
        report.final = evaluate(model, source.eval_batches(config.batch_size), config.block_size)
    if config.checkpoint:
        save_checkpoint(model, config.checkpoint)
    return model, report


def evaluate(model, batches: Iterable, block_size: int = DEFAULT_BLOCK_SIZE) -> LossBreakdown:
    """Mean error and per-latent density over every sample in ``batches``.

    Density columns are accumulated across batches, so the result matches a
    single pass over the concatenated data.
    """
    n, err_sum = 0, 0.0
    l1 = l2 = None
    for batch in batches:
        rows = np.asarray(getattr(batch, "rows", batch))
        if not len(rows):
            continue
        if isinstance(model, TopKModel):
            recon, s = topk_forward(model, rows)
            err_sum += float(quadratic_error(s, np.linalg.norm(recon, axis=1)).sum())
            n += len(rows)
            continue
        f = encode(model, rows).f.astype(np.float64)
        err_sum += float(sse(model, f, block_size=block_size).sum())
        l1 = np.abs(f).sum(axis=0) if l1 is None else l1 + np.abs(f).sum(axis=0)
        l2 = np.square(f).sum(axis=0) if l2 is None else l2 + np.square(f).sum(axis=0)
        n += len(rows)
    if n == 0:
        raise ValueError("evaluation data is empty")
    error = err_sum / n
    density = 0.0
    if l1 is not None and n >= 2 and len(l1):
        norm = np.sqrt(l2)
        ratio = np.where(norm > 0, l1 / np.where(norm > 0, norm, 1.0), 1.0)
        density = float(np.clip((ratio - 1.0) / (np.sqrt(n) - 1.0), 0.0, 1.0).mean())
    return LossBreakdown(error, density, error, density)


def pareto_sweep(config: TrainConfig, alphas, rows=None) -> list[dict]:
    """One train + held-out evaluation per alpha."""
    alphas = list(alphas)
    if not alphas:
        raise ValueError("alpha list is empty")
    table = []
    for a in alphas:
        _, report = train(config.with_(alpha=float(a), checkpoint=None), rows=rows)
        final = report.final
        table.append({"alpha": float(a), "error": final.error if final else 1.0,
                      "density": final.density if final else 0.0})
    return table


def sweep_csv(table: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("alpha", "error", "density"))
    for row in table:
        writer.writerow([repr(row["alpha"]), repr(row["error"]), repr(row["density"])])
    return buf.getvalue()
