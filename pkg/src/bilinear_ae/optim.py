"""Momentum-free Muon: orthogonalised gradient steps on a trapezoid schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NS_COEFFS = (3.4445, -4.7750, 2.0315)


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.01
    steps: int = 1024
    warmup_frac: float = 0.5
    alpha_warmup_steps: int = 256
    ns_iters: int = 5
    polish_iters: int = 3

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 < self.warmup_frac <= 1:
            raise ValueError(f"warmup_frac must lie in (0, 1], got {self.warmup_frac}")
        if self.ns_iters < 1:
            raise ValueError(f"ns_iters must be >= 1, got {self.ns_iters}")
        if self.steps < 0 or self.alpha_warmup_steps < 0 or self.polish_iters < 0:
            raise ValueError("steps, alpha_warmup_steps and polish_iters must be non-negative")


def orthogonalize(G, ns_iters: int = 5, polish_iters: int = 3) -> np.ndarray:
    """Map ``G = U S V^T`` to approximately ``U V^T``.

    A few quintic Newton-Schulz steps pull every singular value into roughly
    [0.68, 1.13]; cubic steps afterwards converge the band onto 1.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError("cannot orthogonalise a matrix with non-finite entries")
    tall = G.shape[0] > G.shape[1]
    X = G.T if tall else G
    norm = np.linalg.norm(X)
    if norm == 0:
        return np.zeros_like(G)
    X = X / (norm + 1e-7)
    a, b, c = NS_COEFFS
    for _ in range(ns_iters):
        A = X @ X.T
        X = a * X + (b * A + c * A @ A) @ X
    for _ in range(polish_iters):
        X = 1.5 * X - 0.5 * (X @ X.T) @ X
    return X.T if tall else X


def lr_at(step: int, config: OptimConfig) -> float:
    """Flat at ``lr`` for the first ``warmup_frac`` of training, then linear to zero."""
    if not 0 <= step < config.steps:
        raise ValueError(f"step {step} outside [0, {config.steps})")
    flat = config.warmup_frac * config.steps
    if step < flat:
        return config.lr
    return config.lr * (config.steps - step) / (config.steps - flat)


def alpha_at(step: int, alpha_target: float, config: OptimConfig) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if config.alpha_warmup_steps == 0:
        return alpha_target
    return alpha_target * min(1.0, step / config.alpha_warmup_steps)


def shape_scale(shape) -> float:
    rows, cols = shape
    return float(np.sqrt(max(rows, cols) / min(rows, cols)))


def step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], step_index: int,
         config: OptimConfig) -> dict[str, np.ndarray]:
    """One update ``P <- P - lr * scale * orthogonalize(grad)`` per matrix.

    Vectors (biases) have no meaningful orthogonalisation and take a plain
    gradient step instead.
    """
    lr = lr_at(step_index, config)
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if p.ndim == 2 and min(p.shape) > 0:
            update = shape_scale(p.shape) * orthogonalize(g, config.ns_iters, config.polish_iters)
        else:
            update = np.asarray(g, dtype=np.float64)
        out[name] = (p.astype(np.float64) - lr * update).astype(p.dtype)
    return out
