"""Bilinear autoencoder parameters, encoding and checkpoint IO.

A latent is the rank-1 bilinear form ``x^T l_j r_j^T x``. The encoder is the
pair of factor matrices ``L`` and ``R`` (one row per latent); the decoder is
the transpose of the implicit ``(d_lat x d_in^2)`` matrix ``B`` whose rows are
``vec(l_j r_j^T)``. ``B`` is never built outside of test oracles.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VARIANTS = ("vanilla", "ordered", "mixed", "combined")
MIXING_VARIANTS = ("mixed", "combined")
ORDERED_VARIANTS = ("ordered", "combined")

CHECKPOINT_MAGIC = b"BAE1"
CHECKPOINT_VERSION = 1
# variant byte values; 4 is the TopK baseline (see topk.py)
VARIANT_CODES = {"vanilla": 0, "ordered": 1, "mixed": 2, "combined": 3, "topk": 4}
_HEADER = struct.Struct("<4sIBIII")


class ShapeError(ValueError):
    """Array dimensions do not agree with the model."""


class VariantError(ValueError):
    """Operation needs a component the model variant does not have."""


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


@dataclass(frozen=True)
class ModelDims:
    d_in: int
    d_lat: int
    d_mix: int | None = None

    def __post_init__(self):
        if self.d_in < 1 or self.d_lat < 1:
            raise ValueError(f"d_in and d_lat must be >= 1, got {self.d_in}, {self.d_lat}")
        if self.d_mix is not None and not 1 <= self.d_mix <= self.d_lat:
            raise ValueError(f"d_mix must lie in [1, d_lat={self.d_lat}], got {self.d_mix}")


@dataclass
class BilinearModel:
    """Trainable state of a bilinear autoencoder.

    ``L`` and ``R`` are ``(d_lat, d_in)``; ``D`` is ``(d_mix, d_lat)`` and only
    present for the mixing variants.
    """

    L: np.ndarray
    R: np.ndarray
    D: np.ndarray | None = None
    variant: str = "vanilla"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise VariantError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.L = np.asarray(self.L)
        self.R = np.asarray(self.R)
        if self.L.ndim != 2 or self.L.shape != self.R.shape:
            raise ShapeError(f"L and R must be 2-d with equal shapes, got {self.L.shape} and {self.R.shape}")
        has_mixer = self.variant in MIXING_VARIANTS
        if has_mixer != (self.D is not None):
            raise VariantError(f"variant {self.variant!r} {'requires' if has_mixer else 'forbids'} a mixer D")
        if self.D is not None:
            self.D = np.asarray(self.D)
            if self.D.ndim != 2 or self.D.shape[1] != self.d_lat:
                raise ShapeError(f"D must have shape (d_mix, {self.d_lat}), got {self.D.shape}")

    @property
    def d_in(self) -> int:
        return self.L.shape[1]

    @property
    def d_lat(self) -> int:
        return self.L.shape[0]

    @property
    def d_mix(self) -> int | None:
        return None if self.D is None else self.D.shape[0]

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.d_in, self.d_lat, self.d_mix)

    @property
    def ordered(self) -> bool:
        return self.variant in ORDERED_VARIANTS

    def params(self) -> dict[str, np.ndarray]:
        out = {"L": self.L, "R": self.R}
        if self.D is not None:
            out["D"] = self.D
        return out

    def replace(self, **params) -> "BilinearModel":
        merged = {**self.params(), **params}
        return BilinearModel(merged["L"], merged["R"], merged.get("D"), self.variant)

    def astype(self, dtype) -> "BilinearModel":
        return self.replace(**{k: v.astype(dtype) for k, v in self.params().items()})


@dataclass
class LatentActivations:
    f: np.ndarray
    g: np.ndarray | None = None


def semi_orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with orthonormal rows, or orthonormal columns when tall.

    Tall matrices are filled in ``cols``-sized row blocks, each block an
    independent orthogonal matrix, so every row still has unit norm.
    """
    if rows <= cols:
        q, r = np.linalg.qr(rng.standard_normal((cols, rows)))
        return (q * np.sign(np.diag(r))).T
    blocks = []
    for start in range(0, rows, cols):
        blocks.append(semi_orthogonal(min(cols, rows - start), cols, rng))
    return np.vstack(blocks)


def init_model(dims: ModelDims, variant: str = "vanilla", seed: int | np.random.Generator = 0,
               dtype=np.float32) -> BilinearModel:
    """Orthogonally initialised model at unit scale."""
    rng = np.random.default_rng(seed)
    L = semi_orthogonal(dims.d_lat, dims.d_in, rng)
    R = semi_orthogonal(dims.d_lat, dims.d_in, rng)
    D = None
    if variant in MIXING_VARIANTS:
        if dims.d_mix is None:
            raise VariantError(f"variant {variant!r} needs d_mix")
        D = semi_orthogonal(dims.d_mix, dims.d_lat, rng)
    return BilinearModel(L.astype(dtype), R.astype(dtype), None if D is None else D.astype(dtype), variant)


def _check_input(model: BilinearModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise ShapeError(f"expected inputs with {model.d_in} features, got shape {x.shape}")
    return x


def encode(model: BilinearModel, x) -> LatentActivations:
    """Latent activations ``f[s, j] = (l_j . x_s) (r_j . x_s)``.

    Accepts a raw array or an ``ActivationBatch``; inputs are assumed to be
    unit-normalised already.
    """
    x = _check_input(model, getattr(x, "rows", x))
    f = (x @ model.L.T) * (x @ model.R.T)
    g = None if model.D is None else f @ model.D.T
    return LatentActivations(f, g)


def latent_form(model: BilinearModel, j: int) -> np.ndarray:
    """The rank-1 bilinear form ``l_j r_j^T`` of latent ``j``."""
    if not 0 <= j < model.d_lat:
        raise IndexError(f"latent index {j} out of range for d_lat={model.d_lat}")
    return np.outer(model.L[j], model.R[j])


def composite_form(model: BilinearModel, indices, weights) -> np.ndarray:
    """Weighted sum of latent forms ``sum_j w_j l_j r_j^T``."""
    idx = np.asarray(indices, dtype=int)
    w = np.asarray(weights, dtype=np.float64)
    return (model.L[idx].T.astype(np.float64) * w) @ model.R[idx].astype(np.float64)


def materialize_encoder(model: BilinearModel) -> np.ndarray:
    """Dense ``(d_lat, d_in**2)`` encoder matrix. Test oracles only."""
    L = model.L.astype(np.float64)
    R = model.R.astype(np.float64)
    return np.einsum("ji,jk->jik", L, R).reshape(model.d_lat, -1)


# -- checkpoints -------------------------------------------------------------

def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(variant: str, d_in: int, d_lat: int, d_extra: int, arrays) -> bytes:
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, VARIANT_CODES[variant], d_in, d_lat, d_extra)
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    return header + body


def save_checkpoint(model, path) -> None:
    """Write a model (bilinear or TopK) in the BAE1 container format."""
    if isinstance(model, BilinearModel):
        payload = _pack(model.variant, model.d_in, model.d_lat, model.d_mix or 0, model.params().values())
    else:
        from .topk import TopKModel

        if not isinstance(model, TopKModel):
            raise TypeError(f"cannot checkpoint {type(model).__name__}")
        payload = _pack("topk", model.d_in, model.d_lat, model.k,
                        [model.W_enc, model.b_enc, model.W_dec, model.b_dec])
    atomic_write_bytes(path, payload)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, code, d_in, d_lat, d_extra = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    names = {v: k for k, v in VARIANT_CODES.items()}
    if code not in names:
        raise CheckpointError(f"{path}: unknown variant code {code}")
    variant = names[code]
    if variant == "topk":
        shapes = [(d_lat, d_in), (d_lat,), (d_in, d_lat), (d_in,)]
    else:
        shapes = [(d_lat, d_in), (d_lat, d_in)]
        if variant in MIXING_VARIANTS:
            shapes.append((d_extra, d_lat))
    expected = sum(int(np.prod(s)) for s in shapes) * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise CheckpointError(f"{path}: payload is {len(body)} bytes, expected {expected}")
    arrays, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(body, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float32))
        offset += 4 * n
    if variant == "topk":
        from .topk import TopKModel

        return TopKModel(*arrays, k=d_extra)
    return BilinearModel(arrays[0], arrays[1], arrays[2] if len(arrays) == 3 else None, variant)
