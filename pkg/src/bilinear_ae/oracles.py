"""Brute-force reference implementations that build the product space explicitly.

Only usable for small ``d_in``; they back the ``verify`` command and the tests.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .kernels import TileSchedule, KernelTiles, blocked_quadratic_form, plain_kernel, uniform_prefix_weights
from .losses import hoyer_density, loss_and_grads, sse
from .model import MIXING_VARIANTS, VARIANTS, BilinearModel, encode, materialize_encoder
from .topk import quadratic_error

ORACLE_MAX_D_IN = 8


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_model(rng: np.random.Generator, d_in: int, d_lat: int, variant: str = "vanilla",
                 d_mix: int | None = None, scale: float = 0.5) -> BilinearModel:
    """Gaussian 64-bit model, for oracle comparisons rather than training."""
    L = scale * rng.standard_normal((d_lat, d_in))
    R = scale * rng.standard_normal((d_lat, d_in))
    D = None
    if variant in MIXING_VARIANTS:
        D = rng.standard_normal((d_mix or max(1, d_lat // 2), d_lat)) / np.sqrt(d_lat)
    return BilinearModel(L, R, D, variant)


def smooth_inputs(rng: np.random.Generator, model: BilinearModel, n: int, h: float = 1e-3,
                  max_tries: int = 10000) -> np.ndarray:
    """Unit inputs for which no activation changes sign under a step of ``h``.

    The density penalty has a kink wherever an activation crosses zero; a
    central difference taken across it does not estimate a derivative. A
    step ``h`` in one entry of ``l_j`` or ``r_j`` moves ``f_j`` by at most
    ``h`` times the other factor's norm, so twice that is kept as margin.
    """
    norms = np.linalg.norm(np.vstack([model.L, model.R]).astype(np.float64), axis=1)
    margin = 2.0 * h * norms.max()
    for _ in range(max_tries):
        x = unit_rows(rng, n, model.d_in)
        if np.abs(encode(model, x).f).min() >= margin:
            return x
    raise RuntimeError("could not draw inputs away from the density kink")


def dense_reconstruction(model: BilinearModel, x, w=None) -> np.ndarray:
    """Per-sample error computed from explicit ``x (x) x`` and decoded forms."""
    x = np.asarray(x, dtype=np.float64)
    B = materialize_encoder(model)
    X = np.einsum("si,sj->sij", x, x).reshape(len(x), -1)
    f = X @ B.T
    if model.variant in ("vanilla", "mixed"):
        if model.D is None:
            recon = f @ B
        else:
            D = np.asarray(model.D, dtype=np.float64)
            recon = (f @ D.T) @ (D @ B)
        return np.square(X - recon).sum(axis=1)
    w = uniform_prefix_weights(model.d_lat) if w is None else np.asarray(w, dtype=np.float64)
    M = np.eye(model.d_lat) if model.D is None else np.asarray(model.D, np.float64).T @ np.asarray(model.D, np.float64)
    out = np.zeros(len(x))
    for k in range(model.d_lat):
        masked = f.copy()
        masked[:, k + 1:] = 0.0
        recon = masked @ M @ B
        out += w[k] * np.square(X - recon).sum(axis=1)
    return out


def dense_frobenius_similarity(m1: BilinearModel, m2: BilinearModel) -> float:
    B1, B2 = materialize_encoder(m1), materialize_encoder(m2)
    A1, A2 = B1.T @ B1, B2.T @ B2
    return 1.0 - np.square(A1 - A2).sum() / (np.square(A1).sum() + np.square(A2).sum())


def brute_force_assignment(C: np.ndarray) -> tuple[np.ndarray, float]:
    """Best permutation by exhaustive search, for ``n <= 8``."""
    n = C.shape[0]
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        val = C[np.arange(n), perm].sum()
        if val > best:
            best, best_perm = val, perm
    return np.array(best_perm), float(best)


def dense_quadratic_error(x, xhat) -> float:
    x, xhat = np.asarray(x, np.float64), np.asarray(xhat, np.float64)
    return float(np.square(np.outer(x, x) - np.outer(xhat, xhat)).sum())


def finite_difference_grads(model: BilinearModel, x, alpha: float, h: float = 1e-3) -> dict[str, np.ndarray]:
    """Central differences of the training objective, one parameter entry at a time."""
    out = {}
    params = {k: np.asarray(v, dtype=np.float64) for k, v in model.params().items()}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1.0, -1.0):
                q = p.copy()
                q[idx] += sign * h
                vals.append(loss_and_grads(model.replace(**{**params, name: q}), x, alpha)[0].total)
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out[name] = g
    return out


def _rel(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def run_suite(seed: int = 0, trials: int = 20, d_in: int = 6) -> list[CheckResult]:
    """Kernel-trick computations against their materialised counterparts."""
    if not 1 <= d_in <= ORACLE_MAX_D_IN:
        raise ValueError(f"oracle suite needs 1 <= d_in <= {ORACLE_MAX_D_IN}, got {d_in}")
    rng = np.random.default_rng(seed)
    results = []

    def record(name, worst, tol):
        results.append(CheckResult(name, bool(worst <= tol), f"worst={worst:.3g} tol={tol:g}"))

    worst = 0.0
    for _ in range(trials):
        m = random_model(rng, d_in, int(rng.integers(1, 13)))
        B = materialize_encoder(m)
        worst = max(worst, float(np.abs(plain_kernel(m).K - B @ B.T).max()))
    record("kernel identity", worst, 1e-6)

    for variant in VARIANTS:
        worst = 0.0
        for _ in range(trials):
            m = random_model(rng, d_in, int(rng.integers(2, 13)), variant, d_mix=int(rng.integers(1, 7)))
            x = unit_rows(rng, 4, d_in)
            got = sse(m, encode(m, x).f)
            worst = max(worst, _rel(got, dense_reconstruction(m, x)))
        record(f"{variant} error", worst, 1e-5)

    worst = 0.0
    for variant in VARIANTS:
        m = random_model(rng, min(d_in, 4), 4, variant, d_mix=3)
        x = smooth_inputs(rng, m, 6)
        _, grads = loss_and_grads(m, x, 0.1)
        fd = finite_difference_grads(m, x, 0.1)
        worst = max(worst, max(_rel(grads[k], fd[k]) for k in fd))
    record("gradients", worst, 1e-4)

    n = 16
    checks = [hoyer_density(np.eye(n)[0]), 1.0 - hoyer_density(np.ones(n))]
    v = rng.standard_normal(n)
    checks += [abs(hoyer_density(c * v) - hoyer_density(v)) for c in (1e-3, 1e3)]
    record("hoyer endpoints", max(checks), 1e-9)

    worst = 0.0
    for _ in range(trials):
        d_lat = int(rng.integers(2, 13))
        m = random_model(rng, d_in, d_lat)
        f = encode(m, unit_rows(rng, 3, d_in)).f
        full = np.einsum("si,ij,sj->s", f, plain_kernel(m).K, f)
        for bs in sorted({1, 2, max(1, d_lat // 2), d_lat}):
            tiles = KernelTiles(m.L, m.R, block_size=bs)
            worst = max(worst, _rel(blocked_quadratic_form(f, tiles, TileSchedule(d_lat, bs)), full))
    record("blocked evaluation", worst, 1e-5)

    worst = 0.0
    for _ in range(trials * 10):
        x = unit_rows(rng, 1, d_in)[0]
        xhat = x + 0.3 * rng.standard_normal(d_in)
        s = float(np.square(x - xhat).sum())
        worst = max(worst, _rel(quadratic_error(s, np.linalg.norm(xhat)), dense_quadratic_error(x, xhat)))
    record("product-space error", worst, 1e-5)

    from .similarity import frobenius_similarity

    worst = 0.0
    for _ in range(trials):
        m1, m2 = random_model(rng, d_in, 5), random_model(rng, d_in, 7)
        worst = max(worst, _rel(frobenius_similarity(m1, m2), dense_frobenius_similarity(m1, m2)))
    record("frobenius similarity", worst, 1e-5)
    return results


def timed_suite(**kwargs) -> tuple[list[CheckResult], float]:
    start = time.perf_counter()
    res = run_suite(**kwargs)
    return res, time.perf_counter() - start
