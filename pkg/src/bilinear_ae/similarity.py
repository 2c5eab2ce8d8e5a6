"""Weight-only comparison of bilinear autoencoders.

Both metrics work on latent-by-latent Gram matrices, so nothing of size
``d_in**2`` is ever built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kernels import cross_kernel
from .model import BilinearModel, ShapeError

MAX_ASSIGNMENT_LATENTS = 8192


@dataclass
class CrossKernel:
    """``C[i, j] = (l_i . l'_j)(r_i . r'_j)`` between two encoders."""

    C: np.ndarray

    @classmethod
    def between(cls, m1: BilinearModel, m2: BilinearModel) -> "CrossKernel":
        if m1.d_in != m2.d_in:
            raise ShapeError(f"input dimensions differ: {m1.d_in} vs {m2.d_in}")
        return cls(cross_kernel(m1.L, m1.R, m2.L, m2.R))

    @property
    def sq_norm(self) -> float:
        return float(np.square(self.C).sum())


def frobenius_similarity(m1: BilinearModel, m2: BilinearModel) -> float:
    """``2 Tr(A^T A') / (|A|^2 + |A'|^2)`` for reconstruction maps ``A = B^T B``.

    ``Tr(A^T A') = |B B'^T|^2_F`` and ``|A|^2_F = |B B^T|^2_F``, i.e. squared
    norms of cross and plain kernels. The mixer of a mixing model is ignored.
    """
    cross = CrossKernel.between(m1, m2).sq_norm
    a1 = CrossKernel.between(m1, m1).sq_norm
    a2 = CrossKernel.between(m2, m2).sq_norm
    denom = a1 + a2
    if denom == 0:
        raise ValueError("both models have all-zero latent forms")
    return 2.0 * cross / denom


def permutation_similarity(m1: BilinearModel, m2: BilinearModel) -> tuple[float, np.ndarray]:
    """Fraction of the cross-kernel norm kept by the best one-to-one latent matching.

    Returns ``(similarity, perm)`` with latent ``i`` of ``m1`` matched to
    latent ``perm[i]`` of ``m2``; ``perm`` maximises ``sum_i C[i, perm[i]]``.
    """
    if m1.d_lat != m2.d_lat:
        raise ShapeError(f"latent counts differ: {m1.d_lat} vs {m2.d_lat}; assignment must be square")
    if m1.d_lat > MAX_ASSIGNMENT_LATENTS:
        raise ValueError(f"exact assignment is limited to {MAX_ASSIGNMENT_LATENTS} latents, got {m1.d_lat}")
    C = CrossKernel.between(m1, m2).C
    total = np.linalg.norm(C)
    if total == 0:
        raise ValueError("cross kernel is identically zero")
    rows, cols = linear_sum_assignment(C, maximize=True)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    kept = C[rows, cols]
    return float(np.sqrt(np.square(kept).sum()) / total), perm


def self_similarity_diagonal(model: BilinearModel) -> np.ndarray:
    """Per-latent round-trip fidelity ``K_ii / |K_i,:|``.

    Passing latent ``i``'s own form through encoder and decoder gives the
    coefficient row ``K_i,:``; the score is the share of that row left on
    latent ``i``. Non-interfering latents score 1, a duplicated pair scores
    ``1/sqrt(2)``. Zero-norm latents come back as NaN. Use ``np.nanmean``
    for the summary.
    """
    C = CrossKernel.between(model, model).C
    norms = np.linalg.norm(C, axis=1)
    out = np.full(model.d_lat, np.nan)
    ok = norms > 0
    out[ok] = np.diag(C)[ok] / norms[ok]
    return out
