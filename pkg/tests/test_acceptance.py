"""Acceptance criteria, one test each, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from bilinear_ae.analysis import candidate_clusters, greedy_reorder, prefix_curve
from bilinear_ae.data import SyntheticSpec, generate
from bilinear_ae.kernels import KernelTiles, TileSchedule, blocked_quadratic_form, plain_kernel
from bilinear_ae.losses import hoyer_density, loss_and_grads, sse
from bilinear_ae.model import encode, materialize_encoder, save_checkpoint
from bilinear_ae.optim import OptimConfig, orthogonalize
from bilinear_ae.oracles import (dense_quadratic_error, dense_reconstruction, finite_difference_grads,
                                 random_model, smooth_inputs, unit_rows)
from bilinear_ae.similarity import frobenius_similarity, permutation_similarity
from bilinear_ae.topk import quadratic_error, quadratic_error_approx
from bilinear_ae.trainer import TrainConfig, train

SEEDS = (0, 1, 2, 3)
RESULTS: list[str] = []


def report(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[acceptance {number:2d}] {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    print(line)
    RESULTS.append(line)
    assert passed, line


def rel(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def test_01_kernel_identity():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        m = random_model(rng, int(rng.integers(1, 9)), int(rng.integers(1, 17)), scale=1.0)
        B = materialize_encoder(m)
        worst = max(worst, float(np.abs(plain_kernel(m).K - B @ B.T).max()))
    elapsed = time.perf_counter() - start
    report(1, "kernel identity", worst <= 1e-6 and elapsed < 5,
           f"max-abs {worst:.2e} (tol 1e-6), {elapsed:.2f}s (limit 5s)")


def test_02_loss_oracle_equivalence():
    rng = np.random.default_rng(2)
    worst = {}
    for variant in ("vanilla", "ordered", "mixed", "combined"):
        w = 0.0
        for _ in range(100):
            d_in, d_lat = int(rng.integers(1, 9)), int(rng.integers(1, 17))
            m = random_model(rng, d_in, d_lat, variant, d_mix=int(rng.integers(1, 9)))
            x = unit_rows(rng, 3, d_in)
            w = max(w, rel(sse(m, encode(m, x).f), dense_reconstruction(m, x)))
        worst[variant] = w
    report(2, "loss-oracle equivalence", max(worst.values()) <= 1e-5,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-5 rel)")


def test_03_gradient_check():
    rng = np.random.default_rng(3)
    worst = fine = 0.0
    variants = ("vanilla", "ordered", "mixed", "combined")
    for i in range(20):
        variant = variants[i % 4]
        m = random_model(rng, int(rng.integers(2, 6)), int(rng.integers(2, 7)), variant,
                         d_mix=int(rng.integers(1, 5)))
        x = smooth_inputs(rng, m, 8, h=1e-3)
        _, grads = loss_and_grads(m, x, alpha=0.1)
        fd = finite_difference_grads(m, x, alpha=0.1, h=1e-3)
        worst = max(worst, max(rel(grads[k], fd[k]) for k in fd))
        # diagnostic only: shows whether a miss is truncation error of the stencil
        fd_fine = finite_difference_grads(m, x, alpha=0.1, h=1e-4)
        fine = max(fine, max(rel(grads[k], fd_fine[k]) for k in fd_fine))
    report(3, "gradient check", worst <= 1e-4,
           f"worst relative {worst:.2e} at h=1e-3 over 20 draws (tol 1e-4); {fine:.2e} at h=1e-4")


def test_04_hoyer_endpoints_and_bound():
    rng = np.random.default_rng(4)
    n = 64
    onehot = hoyer_density(np.eye(n)[5])
    uniform = hoyer_density(np.full(n, 0.3))
    excess, worst_k = 0.0, None
    for _ in range(200):
        k = int(rng.integers(1, n + 1))
        v = np.zeros(n)
        v[rng.choice(n, k, replace=False)] = rng.standard_normal(k)
        if hoyer_density(v) - k / n > excess:
            excess, worst_k = hoyer_density(v) - k / n, k
    bound_ok = excess <= 1e-9
    v = rng.standard_normal(n)
    scale = max(abs(hoyer_density(c * v) - hoyer_density(v)) for c in (1e-3, 1.0, 1e3))
    ok = onehot == 0.0 and uniform == 1.0 and bound_ok and scale <= 1e-9
    report(4, "Hoyer endpoints and bound", ok,
           f"one-hot {onehot}, uniform {uniform}, k-sparse bound exceeded by up to {excess:.3f}"
           f"{'' if worst_k is None else f' (k={worst_k}, n={n})'}, "
           f"scale drift {scale:.1e}")


def test_05_blocked_consistency():
    rng = np.random.default_rng(5)
    worst_tiles = worst_full = 0.0
    for _ in range(50):
        d_lat = int(rng.integers(2, 33))
        m = random_model(rng, 8, d_lat)
        f = encode(m, unit_rows(rng, 4, 8)).f
        K = plain_kernel(m).K
        full = np.einsum("si,ij,sj->s", f, K, f)
        ref = blocked_quadratic_form(f, KernelTiles(m.L, m.R, block_size=d_lat), TileSchedule(d_lat, d_lat))
        for bs in sorted({1, 2, max(1, d_lat // 2), d_lat}):
            got = blocked_quadratic_form(f, KernelTiles(m.L, m.R, block_size=bs), TileSchedule(d_lat, bs))
            worst_tiles = max(worst_tiles, rel(got, ref))
            worst_full = max(worst_full, rel(got, full))
    report(5, "blocked evaluation", max(worst_tiles, worst_full) <= 1e-5,
           f"across tile sizes {worst_tiles:.1e}, vs full double sum {worst_full:.1e} (tol 1e-5)")


def test_06_product_space_error():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        x = unit_rows(rng, 1, 12)[0]
        xhat = x + rng.uniform(0.01, 1.0) * rng.standard_normal(12)
        s = float(np.square(x - xhat).sum())
        worst = max(worst, rel(quadratic_error(s, np.linalg.norm(xhat)), dense_quadratic_error(x, xhat)))
    approx = 0.0
    for s in np.linspace(1e-6, 1e-2, 50):
        x = unit_rows(rng, 1, 12)[0]
        # unit-norm reconstruction at squared distance s
        perp = rng.standard_normal(12)
        perp -= perp @ x * x
        perp /= np.linalg.norm(perp)
        cos = 1 - s / 2
        xhat = cos * x + np.sqrt(1 - cos**2) * perp
        approx = max(approx, abs(quadratic_error_approx(s) / dense_quadratic_error(x, xhat) - 1))
    report(6, "product-space error formula", worst <= 1e-5 and approx <= 0.01,
           f"exact form {worst:.1e} (tol 1e-5), approximation {approx:.1e} (tol 1%)")


def _planted_recovery(seed: int) -> float:
    spec = SyntheticSpec("superposed_sparse", d_in=16, n_features=24, seed=seed)
    config = TrainConfig(d_in=16, d_lat=64, variant="vanilla", alpha=0.1, optim=OptimConfig(steps=2000),
                         synthetic=spec, batch_size=256, seed=seed)
    model, _ = train(config)
    dirs = generate(spec, 1).truth.directions
    L, R = model.L.astype(np.float64), model.R.astype(np.float64)
    # Frobenius cosine between u u^T and each latent form l r^T
    cos = np.abs((dirs @ L.T) * (dirs @ R.T)) / (np.linalg.norm(L, axis=1) * np.linalg.norm(R, axis=1))
    return float((cos.max(axis=1) >= 0.9).mean())


def test_07_planted_recovery():
    start = time.perf_counter()
    fracs = [_planted_recovery(s) for s in SEEDS]
    elapsed = time.perf_counter() - start
    hits = sum(f >= 0.8 for f in fracs)
    report(7, "planted recovery", hits >= 3 and elapsed < 120,
           f"recovered fractions {[round(f, 3) for f in fracs]}, {hits}/4 seeds >= 0.8, {elapsed:.0f}s")


def _plane_angle(seed: int) -> float:
    spec = SyntheticSpec("circle_manifold", d_in=16, subspace=(2, 5), seed=seed)
    config = TrainConfig(d_in=16, d_lat=8, d_mix=3, variant="mixed", alpha=0.1, optim=OptimConfig(steps=2000),
                         synthetic=spec, batch_size=256, seed=seed)
    model, _ = train(config)
    top = candidate_clusters(model, n_candidates=1)[0]
    plane = generate(spec, 1).truth.subspace.T
    return float(np.degrees(subspace_angles(top.eigenvectors[:, :2], plane).max()))


def test_08_manifold_recovery():
    angles = [_plane_angle(s) for s in SEEDS]
    hits = sum(a < 15 for a in angles)
    report(8, "manifold recovery", hits >= 3,
           f"largest principal angles {[round(a, 2) for a in angles]} deg, {hits}/4 seeds < 15")


def _ordering(seed: int) -> tuple[float, float, float]:
    spec = SyntheticSpec("superposed_sparse", d_in=16, n_features=24, seed=seed)
    models = {}
    for variant in ("ordered", "vanilla"):
        config = TrainConfig(d_in=16, d_lat=32, variant=variant, alpha=0.1, optim=OptimConfig(steps=1000),
                             synthetic=spec, batch_size=256, seed=seed)
        models[variant], _ = train(config)
    data = generate(spec, 4000)
    k = 32 // 4
    ordered, vanilla = prefix_curve(models["ordered"], data), prefix_curve(models["vanilla"], data)
    _, greedy = greedy_reorder(models["ordered"], data)
    return ordered[k - 1], vanilla[k - 1], abs(greedy[-1] - ordered[-1])


def test_09_ordering_property():
    results = [_ordering(s) for s in SEEDS]
    hits = sum(o < v for o, v, _ in results)
    endpoint = max(r[2] for r in results)
    report(9, "ordering property", hits >= 3 and endpoint <= 1e-6,
           f"prefix error at d_lat/4 ordered vs vanilla "
           f"{', '.join(f'{o:.3f}/{v:.3f}' for o, v, _ in results)}, {hits}/4 lower; "
           f"greedy endpoint gap {endpoint:.1e}")


def test_10_similarity_sanity():
    rng = np.random.default_rng(10)
    m = random_model(rng, 8, 16)
    self_sim = frobenius_similarity(m, m)
    spec = SyntheticSpec("superposed_sparse", d_in=16, n_features=24, seed=0)
    pair = []
    for seed in (0, 100):
        config = TrainConfig(d_in=16, d_lat=64, variant="vanilla", alpha=0.1, optim=OptimConfig(steps=2000),
                             synthetic=spec, batch_size=256, seed=seed)
        pair.append(train(config)[0])
    cross = frobenius_similarity(*pair)
    sigma = rng.permutation(16)
    permuted = m.replace(L=m.L[sigma], R=m.R[sigma])
    _, perm = permutation_similarity(m, permuted)
    # latent i of m sits at row inv(sigma)[i] of the permuted model
    exact = np.array_equal(perm, np.argsort(sigma))
    ok = abs(self_sim - 1) <= 1e-6 and cross >= 0.9 and exact
    report(10, "similarity sanity", ok,
           f"self {self_sim:.9f}, two seeds {cross:.4f} (>= 0.9), planted permutation "
           f"{'recovered' if exact else 'missed'}")


def test_11_optimizer(tmp_path):
    rng = np.random.default_rng(11)
    shapes = [(8, 4), (4, 8), (64, 16), (16, 64), (100, 3), (3, 100), (32, 8), (256, 64)]
    lo, hi = np.inf, -np.inf
    for i in range(100):
        sv = np.linalg.svd(orthogonalize(rng.standard_normal(shapes[i % len(shapes)])), compute_uv=False)
        lo, hi = min(lo, sv.min()), max(hi, sv.max())
    zero = not np.any(orthogonalize(np.zeros((5, 7))))
    spec = SyntheticSpec("superposed_sparse", d_in=16, seed=3)
    blobs = []
    for _ in range(2):
        config = TrainConfig(d_in=16, d_lat=32, variant="combined", d_mix=8, optim=OptimConfig(steps=64),
                             synthetic=spec, batch_size=128, seed=7)
        model, _ = train(config)
        path = tmp_path / f"run{len(blobs)}.bae"
        save_checkpoint(model, path)
        blobs.append(path.read_bytes())
    same = blobs[0] == blobs[1]
    report(11, "optimizer", 0.7 <= lo and hi <= 1.3 and zero and same,
           f"singular values in [{lo:.4f}, {hi:.4f}], zero->zero {zero}, identical checkpoints {same}")


def test_12_directional_pareto():
    errs, dens = {0.0: [], 1.0: []}, {0.0: [], 1.0: []}
    for seed in (0, 1, 2):
        spec = SyntheticSpec("superposed_sparse", d_in=16, n_features=24, seed=seed)
        for alpha in (0.0, 1.0):
            _, rep = train(TrainConfig(d_in=16, d_lat=64, variant="vanilla", alpha=alpha, synthetic=spec, seed=seed))
            errs[alpha].append(rep.final.error)
            dens[alpha].append(rep.final.density)
    d0, d1 = np.mean(dens[0.0]), np.mean(dens[1.0])
    ratio = np.mean(errs[1.0]) / np.mean(errs[0.0])
    report(12, "directional pareto", d1 < d0 and ratio <= 1.5,
           f"density {d0:.4f} -> {d1:.4f}, error ratio {ratio:.3f} (limit 1.5)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
