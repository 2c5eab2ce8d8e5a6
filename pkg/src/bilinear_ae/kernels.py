"""Kernel matrices ``B B^T`` and tiled quadratic forms over them.

The Gram matrix of the flattened latent forms factorises as
``(L L^T) * (R R^T)`` (element-wise), so it can be built, or sampled tile by
tile, from the ``(d_lat, d_in)`` factors alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .model import BilinearModel, ShapeError, VariantError

DEFAULT_BLOCK_SIZE = 512


@dataclass
class KernelMatrix:
    K: np.ndarray
    kind: str = "plain"

    def __array__(self, dtype=None, copy=None):
        return self.K if dtype is None else self.K.astype(dtype)

    @property
    def shape(self):
        return self.K.shape


@dataclass(frozen=True)
class TileSchedule:
    """Upper-triangular walk over a square grid of latent blocks."""

    size: int
    block_size: int
    pairs: tuple = field(init=False)

    def __post_init__(self):
        if self.size < 0 or self.block_size < 1:
            raise ValueError(f"invalid schedule size={self.size} block_size={self.block_size}")
        n = self.n_blocks
        object.__setattr__(self, "pairs", tuple((i, j) for i in range(n) for j in range(i, n)))

    @property
    def n_blocks(self) -> int:
        return -(-self.size // self.block_size)

    def block(self, i: int) -> slice:
        return slice(i * self.block_size, min((i + 1) * self.block_size, self.size))


def _f64(a):
    return np.asarray(a, dtype=np.float64)


def plain_kernel(model: BilinearModel) -> KernelMatrix:
    L, R = _f64(model.L), _f64(model.R)
    K = (L @ L.T) * (R @ R.T)
    return KernelMatrix((K + K.T) / 2, "plain")


def cross_kernel(L1, R1, L2, R2) -> np.ndarray:
    """``C[i, j] = (l_i . l'_j)(r_i . r'_j)``, the Gram matrix between two encoders."""
    L1, R1, L2, R2 = map(_f64, (L1, R1, L2, R2))
    if L1.shape[1] != L2.shape[1]:
        raise ShapeError(f"input dimensions differ: {L1.shape[1]} vs {L2.shape[1]}")
    return (L1 @ L2.T) * (R1 @ R2.T)


def mixed_kernel(model: BilinearModel, block_size: int = DEFAULT_BLOCK_SIZE) -> KernelMatrix:
    """``D K D^T``, assembled tile by tile so the full ``K`` is never held."""
    if model.D is None:
        raise VariantError(f"mixed kernel needs a mixer; variant is {model.variant!r}")
    L, R, D = _f64(model.L), _f64(model.R), _f64(model.D)
    sched = TileSchedule(model.d_lat, block_size)
    Kmix = np.zeros((model.d_mix, model.d_mix))
    for a, b in sched.pairs:
        sa, sb = sched.block(a), sched.block(b)
        tile = D[:, sa] @ ((L[sa] @ L[sb].T) * (R[sa] @ R[sb].T)) @ D[:, sb].T
        Kmix += tile if a == b else tile + tile.T
    return KernelMatrix((Kmix + Kmix.T) / 2, "mixed")


def uniform_prefix_weights(d_lat: int) -> np.ndarray:
    return np.full(d_lat, 1.0 / d_lat) if d_lat else np.zeros(0)


def prefix_totals(w) -> np.ndarray:
    """``c[i] = sum_{k >= i} w[k]``: total weight of the prefixes containing latent ``i``."""
    w = _f64(w)
    if np.any(w < 0):
        raise ValueError("prefix weights must be non-negative")
    return np.cumsum(w[::-1])[::-1].copy()


def ordered_mask(d_lat: int, w=None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted prefix mask ``W[i, j] = sum_{k >= max(i, j)} w[k]`` and its diagonal ``c``."""
    w = uniform_prefix_weights(d_lat) if w is None else _f64(w)
    if w.shape != (d_lat,):
        raise ShapeError(f"expected {d_lat} prefix weights, got shape {w.shape}")
    c = prefix_totals(w)
    idx = np.arange(d_lat)
    return c[np.maximum.outer(idx, idx)], c


class KernelTiles:
    """On-the-fly tiles of the latent-space kernel a loss contracts against.

    Depending on what is supplied, a tile is ``K_ab``, ``K_ab * W_ab``,
    ``D_a^T Kmix D_b`` or ``(D_a^T Kmix D_b) * W_ab``.
    """

    def __init__(self, L, R, D=None, prefix_weights=None, block_size: int = DEFAULT_BLOCK_SIZE):
        self.L, self.R = _f64(L), _f64(R)
        self.D = None if D is None else _f64(D)
        self.block_size = block_size
        self.c = None if prefix_weights is None else prefix_totals(prefix_weights)
        if self.c is not None and self.c.shape != (self.size,):
            raise ShapeError(f"expected {self.size} prefix weights, got {self.c.shape}")

    @classmethod
    def for_model(cls, model: BilinearModel, prefix_weights=None, block_size: int = DEFAULT_BLOCK_SIZE):
        if prefix_weights is None and model.ordered:
            prefix_weights = uniform_prefix_weights(model.d_lat)
        return cls(model.L, model.R, model.D, prefix_weights, block_size)

    @property
    def size(self) -> int:
        return self.L.shape[0]

    @cached_property
    def kmix(self) -> np.ndarray:
        model = BilinearModel(self.L, self.R, self.D, "mixed")
        return mixed_kernel(model, self.block_size).K

    def tile(self, sa: slice, sb: slice) -> np.ndarray:
        if self.D is None:
            t = (self.L[sa] @ self.L[sb].T) * (self.R[sa] @ self.R[sb].T)
        else:
            t = self.D[:, sa].T @ self.kmix @ self.D[:, sb]
        if self.c is not None:
            ia = np.arange(sa.start, sa.stop)
            ib = np.arange(sb.start, sb.stop)
            t = t * self.c[np.maximum.outer(ia, ib)]
        return t

    def dense(self) -> np.ndarray:
        full = slice(0, self.size)
        t = self.tile(full, full)
        return (t + t.T) / 2


def blocked_quadratic_form(f, tiles: KernelTiles, schedule: TileSchedule | None = None) -> np.ndarray:
    """Per-sample ``f^T H f`` summed over the upper-triangular tiles of ``H``.

    Off-diagonal tiles are counted twice; reduction follows the fixed
    schedule order in 64-bit, so the result is reproducible bit for bit.
    """
    f = _f64(f)
    if f.ndim == 1:
        f = f[None, :]
    if schedule is None:
        schedule = TileSchedule(tiles.size, tiles.block_size)
    if f.shape[1] != tiles.size or schedule.size != tiles.size:
        raise ShapeError(f"latent width {f.shape[1]}, kernel size {tiles.size} and schedule size "
                         f"{schedule.size} must agree")
    out = np.zeros(f.shape[0])
    for a, b in schedule.pairs:
        sa, sb = schedule.block(a), schedule.block(b)
        part = np.einsum("si,ij,sj->s", f[:, sa], tiles.tile(sa, sb), f[:, sb])
        out += part if a == b else 2.0 * part
    return out
