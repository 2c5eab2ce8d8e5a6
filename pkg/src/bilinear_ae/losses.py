"""Reconstruction and sparsity objectives, evaluated through the kernel trick.

Inputs are unit-normalised, so ``X^T X = |x|^4 = 1`` and the product-space
error of every variant reduces to a quadratic form in the latents minus a
weighted inner product plus a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (DEFAULT_BLOCK_SIZE, KernelTiles, blocked_quadratic_form, mixed_kernel,
                      ordered_mask, prefix_totals, uniform_prefix_weights)
from .model import VARIANTS, BilinearModel, ShapeError, VariantError, encode


@dataclass
class LossBreakdown:
    error: float
    density: float
    total: float
    penalty: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {"error": self.error, "density": self.density, "total": self.total}


# -- Hoyer density ------------------------------------------------------------

def hoyer_density(v, axis: int = 0) -> np.ndarray | float:
    """Relative density ``(|v|_1 / |v|_2 - 1) / (sqrt(n) - 1)`` along ``axis``.

    0 for one-hot vectors, 1 for uniform ones. All-zero vectors score 0.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[axis] if v.ndim else 0
    if n < 2:
        raise ValueError(f"Hoyer density needs at least 2 entries along the reduced axis, got {n}")
    # scaling by the peak makes equal-magnitude vectors hit sqrt(n) exactly
    peak = np.abs(v).max(axis=axis, keepdims=True)
    u = np.abs(v) / np.where(peak > 0, peak, 1.0)
    l1 = u.sum(axis=axis)
    sq = np.square(u).sum(axis=axis)
    safe = np.where(sq > 0, sq, 1.0)
    h = np.where(sq > 0, (np.sqrt(l1**2 / safe) - 1.0) / (np.sqrt(n) - 1.0), 0.0)
    h = np.clip(h, 0.0, 1.0)
    return float(h) if h.ndim == 0 else h


def hoyer_density_grad(f) -> np.ndarray:
    """Gradient of each column's Hoyer density w.r.t. that column of ``f``."""
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    l1 = np.abs(f).sum(axis=0)
    l2 = np.sqrt(np.square(f).sum(axis=0))
    safe = np.where(l2 > 0, l2, 1.0)
    g = (np.sign(f) / safe - f * (l1 / safe**3)) / (np.sqrt(n) - 1.0)
    return np.where(l2 > 0, g, 0.0)


def penalty_weights(d_lat: int, ordered: bool = False) -> np.ndarray:
    """Per-latent penalty weights summing to 1.

    Ordered models weight latent ``j`` by ``d_lat - j`` so the sparsity pressure
    follows the importance the cumulative loss assigns to early latents.
    """
    if d_lat == 0:
        return np.zeros(0)
    if not ordered:
        return np.full(d_lat, 1.0 / d_lat)
    w = np.arange(d_lat, 0, -1, dtype=np.float64)
    return w / w.sum()


def batch_density_penalty(f, weights=None) -> float:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError(f"density penalty needs a (n_samples >= 2, d_lat) batch, got shape {f.shape}")
    if f.shape[1] == 0:
        return 0.0
    h = hoyer_density(f, axis=0)
    if weights is None:
        return float(h.mean())
    return float(np.dot(np.asarray(weights, dtype=np.float64), h))


# -- reconstruction errors ----------------------------------------------------

def _latents(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    return f[None, :] if f.ndim == 1 else f


def _check_width(model: BilinearModel, f):
    if f.shape[1] != model.d_lat:
        raise ShapeError(f"latent batch has width {f.shape[1]}, model has d_lat={model.d_lat}")


def sse_vanilla(model: BilinearModel, f, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    f = _latents(f)
    _check_width(model, f)
    quad = blocked_quadratic_form(f, KernelTiles(model.L, model.R, block_size=block_size))
    return quad - 2.0 * np.square(f).sum(axis=1) + 1.0


def sse_ordered(model: BilinearModel, f, w=None, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    f = _latents(f)
    _check_width(model, f)
    w = uniform_prefix_weights(model.d_lat) if w is None else np.asarray(w, dtype=np.float64)
    c = prefix_totals(w)
    quad = blocked_quadratic_form(f, KernelTiles(model.L, model.R, prefix_weights=w, block_size=block_size))
    return quad - 2.0 * (np.square(f) * c).sum(axis=1) + w.sum()


def sse_mixed(model: BilinearModel, f, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    if model.D is None:
        raise VariantError(f"mixed error needs a mixer; variant is {model.variant!r}")
    f = _latents(f)
    _check_width(model, f)
    g = f @ np.asarray(model.D, dtype=np.float64).T
    kmix = mixed_kernel(model, block_size).K
    return np.einsum("si,ij,sj->s", g, kmix, g) - 2.0 * np.square(g).sum(axis=1) + 1.0


def sse_combined(model: BilinearModel, f, w=None, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    if model.D is None:
        raise VariantError(f"combined error needs a mixer; variant is {model.variant!r}")
    f = _latents(f)
    _check_width(model, f)
    w = uniform_prefix_weights(model.d_lat) if w is None else np.asarray(w, dtype=np.float64)
    c = prefix_totals(w)
    D = np.asarray(model.D, dtype=np.float64)
    tiles = KernelTiles(model.L, model.R, D, prefix_weights=w, block_size=block_size)
    quad = blocked_quadratic_form(f, tiles)
    mf = (f @ D.T) @ D
    return quad - 2.0 * (f * c * mf).sum(axis=1) + w.sum()


def sse(model: BilinearModel, f, w=None, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Per-sample product-space error for the model's own variant."""
    if model.variant == "vanilla":
        return sse_vanilla(model, f, block_size)
    if model.variant == "ordered":
        return sse_ordered(model, f, w, block_size)
    if model.variant == "mixed":
        return sse_mixed(model, f, block_size)
    return sse_combined(model, f, w, block_size)


def total_loss(model: BilinearModel, batch, alpha: float, variant: str | None = None,
               w=None, block_size: int = DEFAULT_BLOCK_SIZE) -> LossBreakdown:
    """Mean error plus ``alpha`` times the (possibly ordered) density penalty."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    variant = variant or model.variant
    if variant not in VARIANTS:
        raise VariantError(f"unknown variant {variant!r}")
    if variant != model.variant:
        model = BilinearModel(model.L, model.R, model.D, variant)
    f = encode(model, batch).f.astype(np.float64)
    error = float(sse(model, f, w, block_size).mean())
    density = batch_density_penalty(f)
    penalty = batch_density_penalty(f, penalty_weights(model.d_lat, model.ordered))
    return LossBreakdown(error, density, error + alpha * penalty, penalty)


# -- gradients ----------------------------------------------------------------

def loss_and_grads(model: BilinearModel, x, alpha: float, w=None) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Training objective and its exact gradients w.r.t. ``L``, ``R`` (and ``D``).

    Everything here runs in float64 on dense ``(d_lat, d_lat)`` kernels; the
    product space itself never appears.
    """
    x = np.asarray(getattr(x, "rows", x), dtype=np.float64)
    L = np.asarray(model.L, dtype=np.float64)
    R = np.asarray(model.R, dtype=np.float64)
    n, d_lat = x.shape[0], model.d_lat
    a, b = x @ L.T, x @ R.T
    f = a * b
    GL, GR = L @ L.T, R @ R.T
    K = GL * GR
    S = f.T @ f / n

    if model.ordered:
        W, c = ordered_mask(d_lat, w)
        const = float(c[0]) if d_lat else 0.0
    else:
        W, c, const = None, np.ones(d_lat), 1.0

    if model.D is None:
        H = K if W is None else K * W
        error = float(np.sum(S * H) - 2.0 * np.dot(c, np.diag(S)) + const)
        dF = (2.0 / n) * (f @ H) - (4.0 / n) * f * c
        gamma_K = S if W is None else S * W
        grads = {}
    else:
        D = np.asarray(model.D, dtype=np.float64)
        M = D.T @ D
        MK = M @ K
        H = MK @ M if W is None else (MK @ M) * W
        CM = c[:, None] * M
        error = float(np.sum(S * H) - 2.0 * np.sum(S * CM) + const)
        dF = (2.0 / n) * (f @ H) - (2.0 / n) * (f @ (CM + CM.T))
        T = S if W is None else S * W
        gamma_K = M @ T @ M
        TMK = T @ MK
        gamma_M = TMK + TMK.T - 2.0 * (c[:, None] * S)
        grads = {"D": D @ (gamma_M + gamma_M.T)}

    weights = penalty_weights(d_lat, model.ordered)
    if n >= 2 and d_lat:
        density = float(hoyer_density(f, axis=0).mean())
        penalty = float(np.dot(weights, hoyer_density(f, axis=0)))
        if alpha:
            dF = dF + alpha * hoyer_density_grad(f) * weights
    else:
        density = penalty = 0.0

    grads["L"] = 2.0 * (gamma_K * GR) @ L + (dF * b).T @ x
    grads["R"] = 2.0 * (gamma_K * GL) @ R + (dF * a).T @ x
    breakdown = LossBreakdown(error, density, error + alpha * penalty, penalty)
    return breakdown, grads
