"""Input normalisation, the BACT activation-dump format and synthetic data."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .model import atomic_write_bytes

log = logging.getLogger(__name__)

DUMP_MAGIC = b"BACT"
DUMP_VERSION = 1
DTYPE_F32 = 1
_DUMP_HEADER = struct.Struct("<4sIIQB")
MIN_NORM = 1e-12
STREAM_BLOCK = 4096

SYNTHETIC_KINDS = ("superposed_sparse", "circle_manifold", "sphere_manifold", "clustered_directions",
                   "gaussian_noise")


class DumpFormatError(ValueError):
    """Base class for activation-dump problems."""


class BadMagicError(DumpFormatError):
    pass


class VersionError(DumpFormatError):
    pass


class TruncatedError(DumpFormatError):
    pass


class DimensionMismatchError(DumpFormatError):
    pass


@dataclass
class ActivationBatch:
    rows: np.ndarray
    meta: list | None = None
    dropped: int = 0
    truth: object = None

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def d_in(self) -> int:
        return self.rows.shape[1]


def normalize(rows, meta=None) -> ActivationBatch:
    """Scale each row to unit L2 norm, dropping (and counting) near-zero rows."""
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-d array of rows, got shape {rows.shape}")
    if not np.all(np.isfinite(rows)):
        raise ValueError("activation rows contain non-finite values")
    dtype = rows.dtype if np.issubdtype(rows.dtype, np.floating) else np.float64
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    keep = norms >= MIN_NORM
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d of %d rows with norm below %g", dropped, len(rows), MIN_NORM)
        if not keep.any():
            log.warning("all rows were dropped; batch is empty")
    out = (rows[keep].astype(np.float64) / norms[keep, None]).astype(dtype)
    if meta is not None:
        meta = [m for m, k in zip(meta, keep) if k]
    return ActivationBatch(out, meta, dropped)


# -- BACT dump files ----------------------------------------------------------

def dump_bytes(rows) -> bytes:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-d array of rows, got shape {rows.shape}")
    header = _DUMP_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, rows.shape[1], rows.shape[0], DTYPE_F32)
    return header + rows.tobytes()


def write_dump(path, rows) -> None:
    atomic_write_bytes(path, dump_bytes(rows))


@dataclass(frozen=True)
class DumpHeader:
    d_in: int
    n_rows: int

    @property
    def payload_bytes(self) -> int:
        return 4 * self.d_in * self.n_rows


def read_dump_header(path, expected_d_in: int | None = None) -> DumpHeader:
    path = Path(path)
    with path.open("rb") as fh:
        raw = fh.read(_DUMP_HEADER.size)
    if len(raw) < _DUMP_HEADER.size:
        raise TruncatedError(f"{path}: file too short for a dump header")
    magic, version, d_in, n_rows, dtype = _DUMP_HEADER.unpack(raw)
    if magic != DUMP_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {DUMP_MAGIC!r}")
    if version != DUMP_VERSION:
        raise VersionError(f"{path}: dump version {version} is not supported (expected {DUMP_VERSION})")
    if dtype != DTYPE_F32:
        raise DumpFormatError(f"{path}: unsupported dtype code {dtype}")
    if expected_d_in is not None and d_in != expected_d_in:
        raise DimensionMismatchError(f"{path}: rows have d_in={d_in}, config expects {expected_d_in}")
    header = DumpHeader(d_in, n_rows)
    if path.stat().st_size - _DUMP_HEADER.size < header.payload_bytes:
        raise TruncatedError(f"{path}: payload shorter than the {n_rows} x {d_in} rows in the header")
    return header


def iter_dump_rows(path, batch_size: int, start: int = 0, stop: int | None = None,
                   expected_d_in: int | None = None) -> Iterator[np.ndarray]:
    """Raw (un-normalised) row blocks of a dump, in file order."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    header = read_dump_header(path, expected_d_in)
    stop = header.n_rows if stop is None else min(stop, header.n_rows)
    row_bytes = 4 * header.d_in
    with open(path, "rb") as fh:
        fh.seek(_DUMP_HEADER.size + start * row_bytes)
        pos = start
        while pos < stop:
            take = min(batch_size, stop - pos)
            buf = fh.read(take * row_bytes)
            if len(buf) != take * row_bytes:
                raise TruncatedError(f"{path}: unexpected end of payload at row {pos}")
            yield np.frombuffer(buf, dtype="<f4").reshape(take, header.d_in).astype(np.float32)
            pos += take


def load_dump(path, batch_size: int, expected_d_in: int | None = None) -> Iterator[ActivationBatch]:
    """Stream normalised batches from a dump file; the final batch may be short."""
    for rows in iter_dump_rows(path, batch_size, expected_d_in=expected_d_in):
        yield normalize(rows)


def read_dump(path) -> np.ndarray:
    return np.concatenate(list(iter_dump_rows(path, 1 << 16)) or [np.zeros((0, read_dump_header(path).d_in),
                                                                           np.float32)])


# -- synthetic data -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a dataset with planted ground truth.

    ``subspace`` names input coordinates spanning the planted manifold
    (circle: 2, sphere: 3). ``sparsity`` is the fraction of planted
    features active per sample for the feature-based kinds. ``spread_iters``
    pushes planted directions apart before sampling (0 keeps them Gaussian).
    """

    kind: str = "superposed_sparse"
    d_in: int = 16
    n_features: int = 24
    subspace: tuple = (0, 1)
    sparsity: float = 1 / 24
    noise: float = 0.01
    seed: int = 0
    spread_iters: int = 5000

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; expected one of {SYNTHETIC_KINDS}")
        if self.d_in < 1 or self.n_features < 1:
            raise ValueError("d_in and n_features must be >= 1")
        if not 0 < self.sparsity <= 1:
            raise ValueError(f"sparsity must lie in (0, 1], got {self.sparsity}")
        if self.spread_iters < 0:
            raise ValueError(f"spread_iters must be non-negative, got {self.spread_iters}")
        if self.noise < 0:
            raise ValueError(f"noise must be non-negative, got {self.noise}")
        sub = tuple(int(i) for i in self.subspace)
        object.__setattr__(self, "subspace", sub)
        if len(set(sub)) != len(sub) or any(not 0 <= i < self.d_in for i in sub):
            raise ValueError(f"subspace indices {sub} must be distinct and < d_in={self.d_in}")
        need = {"circle_manifold": 2, "sphere_manifold": 3}.get(self.kind)
        if need is not None and len(sub) != need:
            raise ValueError(f"{self.kind} needs {need} subspace indices, got {len(sub)}")

    @property
    def active(self) -> int:
        return max(1, int(round(self.sparsity * self.n_features)))


def spread_directions(dirs: np.ndarray, iters: int, step: float = 0.4) -> np.ndarray:
    """Lower the mutual coherence of unit rows by descending ``sum_{i != j} (u_i . u_j)^4``.

    Overlap in product space between ``u_i u_i^T`` and ``u_j u_j^T`` is
    ``(u_i . u_j)^2``; keeping it small keeps planted forms distinguishable
    even when there are more directions than input dimensions.
    """
    u = dirs.copy()
    for _ in range(iters):
        g = u @ u.T
        np.fill_diagonal(g, 0.0)
        u -= step * (g**3) @ u
        u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u


@dataclass
class GroundTruth:
    directions: np.ndarray | None = None
    subspace: np.ndarray | None = None


@dataclass
class SyntheticStream:
    """Deterministic sample stream for a ``SyntheticSpec``.

    Planted structure is drawn first from the seed, then samples are drawn
    in fixed-size blocks, so the stream does not depend on how callers split
    their ``take`` calls.
    """

    spec: SyntheticSpec
    truth: GroundTruth = field(init=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.spec.seed)
        s = self.spec
        if s.kind in ("superposed_sparse", "clustered_directions"):
            dirs = self._rng.standard_normal((s.n_features, s.d_in))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            self.truth = GroundTruth(directions=spread_directions(dirs, s.spread_iters))
        elif s.kind in ("circle_manifold", "sphere_manifold"):
            basis = np.zeros((len(s.subspace), s.d_in))
            basis[np.arange(len(s.subspace)), list(s.subspace)] = 1.0
            self.truth = GroundTruth(subspace=basis)
        else:
            self.truth = GroundTruth()
        if s.kind == "clustered_directions":
            self._centers = self.truth.directions
        self._buffer = np.zeros((0, s.d_in))

    def take_raw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError(f"cannot take {n} samples")
        parts, have = [self._buffer], len(self._buffer)
        while have < n:
            block = self._draw(STREAM_BLOCK)
            parts.append(block)
            have += len(block)
        pool = np.concatenate(parts)
        self._buffer = pool[n:]
        return pool[:n]

    def _draw(self, n: int) -> np.ndarray:
        s, rng = self.spec, self._rng
        if s.kind == "superposed_sparse":
            idx = np.argsort(rng.random((n, s.n_features)), axis=1)[:, :s.active]
            coef = rng.choice([-1.0, 1.0], size=(n, s.active)) * rng.uniform(0.5, 1.5, size=(n, s.active))
            x = np.einsum("sa,sad->sd", coef, self.truth.directions[idx])
        elif s.kind == "clustered_directions":
            idx = rng.integers(s.n_features, size=n)
            x = self._centers[idx] * rng.choice([-1.0, 1.0], size=(n, 1))
        elif s.kind in ("circle_manifold", "sphere_manifold"):
            pts = rng.standard_normal((n, len(s.subspace)))
            pts /= np.linalg.norm(pts, axis=1, keepdims=True)
            x = pts @ self.truth.subspace
        else:
            x = rng.standard_normal((n, s.d_in))
        if s.noise:
            x = x + s.noise * rng.standard_normal(x.shape)
        return x

    def take(self, n: int) -> ActivationBatch:
        return normalize(self.take_raw(n))


def generate(spec: SyntheticSpec, n_samples: int) -> ActivationBatch:
    """``n_samples`` normalised samples with the planted truth in ``batch.truth``."""
    stream = SyntheticStream(spec)
    batch = stream.take(n_samples)
    batch.truth = stream.truth
    return batch
