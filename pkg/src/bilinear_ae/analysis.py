"""Weight-based and activation-based analyses of trained bilinear autoencoders."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .kernels import KernelTiles
from .losses import hoyer_density
from .model import BilinearModel, atomic_write_bytes, composite_form, encode

DENSE_THRESHOLD = 0.5
GREEDY_MAX_LATENTS = 4096


def _rows(batches) -> Iterable[np.ndarray]:
    if isinstance(batches, np.ndarray) or hasattr(batches, "rows"):
        batches = [batches]
    for b in batches:
        rows = np.asarray(getattr(b, "rows", b), dtype=np.float64)
        if len(rows):
            yield rows


def _tags(batches) -> list | None:
    if isinstance(batches, np.ndarray) or hasattr(batches, "rows"):
        batches = [batches]
    tags = []
    for b in batches:
        meta = getattr(b, "meta", None)
        if meta is None:
            return None
        tags.extend(meta)
    return tags


def latent_densities(model: BilinearModel, batches) -> np.ndarray:
    """Hoyer density of every latent over all samples, accumulated batch by batch."""
    l1 = l2 = None
    n = 0
    for x in _rows(batches):
        f = encode(model, x).f.astype(np.float64)
        l1 = np.abs(f).sum(0) if l1 is None else l1 + np.abs(f).sum(0)
        l2 = np.square(f).sum(0) if l2 is None else l2 + np.square(f).sum(0)
        n += len(x)
    if n < 2:
        raise ValueError("density needs at least 2 samples")
    norm = np.sqrt(l2)
    ratio = np.where(norm > 0, l1 / np.where(norm > 0, norm, 1.0), 1.0)
    return np.clip((ratio - 1.0) / (np.sqrt(n) - 1.0), 0.0, 1.0)


def density_histogram(model: BilinearModel, batches, bins: int = 20) -> dict:
    dens = latent_densities(model, batches)
    counts, edges = np.histogram(dens, bins=bins, range=(0.0, 1.0))
    return {"edges": edges, "counts": counts, "densities": dens,
            "dense_fraction": float((dens > DENSE_THRESHOLD).mean())}


def activation_histogram(model: BilinearModel, batches, latent_index: int, bins: int = 50,
                         log_scale: bool = True, quantiles=(0.5, 0.9, 0.99)) -> dict:
    if not 0 <= latent_index < model.d_lat:
        raise IndexError(f"latent index {latent_index} out of range for d_lat={model.d_lat}")
    mags = np.concatenate([np.abs(encode(model, x).f[:, latent_index]).astype(np.float64)
                           for x in _rows(batches)] or [np.zeros(0)])
    if not len(mags):
        raise ValueError("activation histogram needs at least one sample")
    positive = mags[mags > 0]
    if not len(positive):
        counts, edges = np.array([len(mags)]), np.array([0.0, 0.0])
    elif log_scale:
        lo, hi = positive.min(), positive.max()
        edges = np.geomspace(lo, hi if hi > lo else lo * 10, bins + 1)
        counts, edges = np.histogram(np.clip(mags, lo, None), bins=edges)
    else:
        counts, edges = np.histogram(mags, bins=bins)
    return {"edges": edges, "counts": counts,
            "quantiles": {float(q): float(np.quantile(mags, q)) for q in quantiles}}


# -- manifold discovery ---------------------------------------------------------

def interaction_matrix(model: BilinearModel) -> np.ndarray:
    """``D^T D`` for mixing models; the plain kernel for models without a mixer."""
    if model.D is not None:
        D = np.asarray(model.D, dtype=np.float64)
        return D.T @ D
    return KernelTiles(model.L, model.R).dense()


def cluster_scores(model: BilinearModel) -> np.ndarray:
    """Density of each row after a fourth power: high when several entries are similarly large."""
    M = interaction_matrix(model)
    if M.shape[0] < 2:
        return np.zeros(M.shape[0])
    return hoyer_density(M**4, axis=1)


@dataclass
class CompositeLatent:
    members: np.ndarray
    weights: np.ndarray
    Q: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    member_L: np.ndarray
    member_R: np.ndarray

    @property
    def Q_sym(self) -> np.ndarray:
        return (self.Q + self.Q.T) / 2

    @property
    def basis(self) -> np.ndarray:
        """Top-3 eigenvectors as rows, zero-padded when ``d_in < 3``."""
        vecs = self.eigenvectors[:, :3].T
        if vecs.shape[0] < 3:
            vecs = np.vstack([vecs, np.zeros((3 - vecs.shape[0], vecs.shape[1]))])
        return vecs

    def activations(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x @ self.member_L.T) * (x @ self.member_R.T)

    def strength(self, x) -> np.ndarray:
        return np.linalg.norm(self.activations(x), axis=1)

    def project(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.basis.T


def build_composite(model: BilinearModel, seed_row: int, top_k: int = 10) -> CompositeLatent:
    M = interaction_matrix(model)
    if not 0 <= seed_row < M.shape[0]:
        raise IndexError(f"seed row {seed_row} out of range for {M.shape[0]} latents")
    row = M[seed_row]
    k = min(top_k, len(row))
    members = np.argsort(-np.abs(row), kind="stable")[:k]
    weights = row[members]
    return composite_from(model, members, weights)


def composite_from(model: BilinearModel, members, weights) -> CompositeLatent:
    members = np.asarray(members, dtype=int)
    weights = np.asarray(weights, dtype=np.float64)
    Q = composite_form(model, members, weights)
    vals, vecs = np.linalg.eigh((Q + Q.T) / 2)
    order = np.argsort(-np.abs(vals), kind="stable")
    return CompositeLatent(members, weights, Q, vals[order], vecs[:, order],
                           model.L[members].astype(np.float64), model.R[members].astype(np.float64))


def candidate_clusters(model: BilinearModel, n_candidates: int = 50, top_k: int = 10,
                       max_shared: int = 5) -> list[CompositeLatent]:
    """Composites seeded from the highest-scoring rows, skipping near-duplicates."""
    order = np.argsort(-cluster_scores(model), kind="stable")
    picked: list[CompositeLatent] = []
    for row in order:
        comp = build_composite(model, int(row), top_k)
        members = set(comp.members.tolist())
        if any(len(members & set(p.members.tolist())) > max_shared for p in picked):
            continue
        picked.append(comp)
        if len(picked) >= n_candidates:
            break
    return picked


@dataclass
class ManifoldExport:
    points: np.ndarray
    strength: np.ndarray
    basis: np.ndarray
    tags: list | None = None

    def to_json(self) -> str:
        return json.dumps({"basis": self.basis.tolist(), "points": self.points.tolist(),
                           "strength": self.strength.tolist(), "tags": self.tags or []})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("x", "y", "z", "strength", "tag"))
        tags = self.tags or [""] * len(self.strength)
        for p, s, t in zip(self.points, self.strength, tags):
            writer.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(s)), t])
        return buf.getvalue()

    def write(self, out_dir, stem: str = "manifold") -> None:
        out = Path(out_dir)
        atomic_write_bytes(out / f"{stem}.json", self.to_json().encode())
        atomic_write_bytes(out / f"{stem}.csv", self.to_csv().encode())


def export_manifold(composite: CompositeLatent, batches, top_fraction: float = 0.25) -> ManifoldExport:
    """Project the most strongly activating inputs onto the composite's top-3 eigenbasis."""
    if not 0 < top_fraction <= 1:
        raise ValueError(f"top_fraction must lie in (0, 1], got {top_fraction}")
    rows = list(_rows(batches))
    if not rows:
        raise ValueError("no samples to export")
    x = np.concatenate(rows)
    tags = _tags(batches)
    strength = composite.strength(x)
    keep = max(1, int(round(top_fraction * len(x))))
    idx = np.sort(np.argsort(-strength, kind="stable")[:keep])
    return ManifoldExport(composite.project(x[idx]), strength[idx], composite.basis,
                          None if tags is None else [tags[i] for i in idx])


# -- prefix reconstruction --------------------------------------------------------

def reconstruction_stats(model: BilinearModel, batches) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise and linear error terms ``(T, c)`` for masked reconstructions.

    For any latent subset ``S`` the mean error is
    ``sum_{i,j in S} T[i, j] - 2 sum_{i in S} c[i] + 1``.
    """
    S = np.zeros((model.d_lat, model.d_lat))
    n = 0
    for x in _rows(batches):
        f = encode(model, x).f.astype(np.float64)
        S += f.T @ f
        n += len(x)
    if n == 0:
        raise ValueError("no samples")
    S /= n
    H = KernelTiles(model.L, model.R, model.D).dense()
    if model.D is None:
        return S * H, np.diag(S).copy()
    D = np.asarray(model.D, dtype=np.float64)
    return S * H, (S * (D.T @ D)).sum(axis=1)


def prefix_curve(model: BilinearModel, batches) -> np.ndarray:
    """Mean error when reconstructing with latents ``0..k`` only, for every ``k``."""
    T, c = reconstruction_stats(model, batches)
    block = np.cumsum(np.cumsum(T, axis=0), axis=1)
    return np.diag(block) - 2.0 * np.cumsum(c) + 1.0


def greedy_reorder(model: BilinearModel, batches) -> tuple[np.ndarray, np.ndarray]:
    """Order latents by repeatedly adding the one that lowers the error most."""
    if model.d_lat > GREEDY_MAX_LATENTS:
        raise ValueError(f"greedy reordering is limited to {GREEDY_MAX_LATENTS} latents, got {model.d_lat}")
    T, c = reconstruction_stats(model, batches)
    n = model.d_lat
    cross = np.zeros(n)
    chosen = np.zeros(n, dtype=bool)
    perm, curve = [], []
    err = 1.0
    diag = np.diag(T)
    for _ in range(n):
        delta = diag + 2.0 * cross - 2.0 * c
        delta[chosen] = np.inf
        j = int(np.argmin(delta))
        err += delta[j]
        chosen[j] = True
        cross += T[j]
        perm.append(j)
        curve.append(err)
    return np.array(perm, dtype=int), np.array(curve)
