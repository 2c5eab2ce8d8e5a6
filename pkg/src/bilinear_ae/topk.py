"""TopK sparse autoencoder baseline and its product-space error conversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ShapeError, semi_orthogonal


@dataclass
class TopKModel:
    W_enc: np.ndarray
    b_enc: np.ndarray
    W_dec: np.ndarray
    b_dec: np.ndarray
    k: int

    def __post_init__(self):
        d_lat, d_in = self.W_enc.shape
        if self.W_dec.shape != (d_in, d_lat) or self.b_enc.shape != (d_lat,) or self.b_dec.shape != (d_in,):
            raise ShapeError("inconsistent TopK parameter shapes")
        if not 1 <= self.k <= d_lat:
            raise ValueError(f"k must lie in [1, d_lat={d_lat}], got {self.k}")

    @property
    def d_in(self) -> int:
        return self.W_enc.shape[1]

    @property
    def d_lat(self) -> int:
        return self.W_enc.shape[0]

    variant = "topk"

    def params(self) -> dict[str, np.ndarray]:
        return {"W_enc": self.W_enc, "b_enc": self.b_enc, "W_dec": self.W_dec, "b_dec": self.b_dec}

    def replace(self, **params) -> "TopKModel":
        return TopKModel(**{**self.params(), **params}, k=self.k)


def init_topk(d_in: int, d_lat: int, k: int, seed=0, dtype=np.float32) -> TopKModel:
    rng = np.random.default_rng(seed)
    W = semi_orthogonal(d_lat, d_in, rng)
    return TopKModel(W.astype(dtype), np.zeros(d_lat, dtype), W.T.copy().astype(dtype), np.zeros(d_in, dtype), k)


def topk_mask(pre: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries per row; ties go to the lower index."""
    if k > pre.shape[1]:
        raise ValueError(f"k={k} exceeds the latent width {pre.shape[1]}")
    order = np.argsort(-pre, axis=1, kind="stable")[:, :k]
    mask = np.zeros(pre.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def topk_forward(model: TopKModel, batch) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction and per-sample squared error ``s = |x - x_hat|^2``."""
    x = np.asarray(getattr(batch, "rows", batch), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise ShapeError(f"expected inputs with {model.d_in} features, got shape {x.shape}")
    pre = x @ model.W_enc.T.astype(np.float64) + model.b_enc
    z = np.where(topk_mask(pre, model.k), pre, 0.0)
    recon = z @ model.W_dec.T.astype(np.float64) + model.b_dec
    return recon, np.square(x - recon).sum(axis=1)


def topk_loss_and_grads(model: TopKModel, x) -> tuple[float, dict[str, np.ndarray]]:
    x = np.asarray(getattr(x, "rows", x), dtype=np.float64)
    n = x.shape[0]
    W_enc, W_dec = model.W_enc.astype(np.float64), model.W_dec.astype(np.float64)
    pre = x @ W_enc.T + model.b_enc
    mask = topk_mask(pre, model.k)
    z = np.where(mask, pre, 0.0)
    recon = z @ W_dec.T + model.b_dec
    resid = recon - x
    loss = float(np.square(resid).sum(axis=1).mean())
    d_recon = 2.0 * resid / n
    d_pre = np.where(mask, d_recon @ W_dec, 0.0)
    grads = {
        "W_dec": d_recon.T @ z,
        "b_dec": d_recon.sum(axis=0),
        "W_enc": d_pre.T @ x,
        "b_enc": d_pre.sum(axis=0),
    }
    return loss, grads


def normalize_decoder(model: TopKModel) -> TopKModel:
    norms = np.linalg.norm(model.W_dec.astype(np.float64), axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    return model.replace(W_dec=(model.W_dec / norms).astype(model.W_dec.dtype))


def quadratic_error(s, recon_norm=1.0):
    """Product-space error ``|x (x) x - x_hat (x) x_hat|^2`` of a unit input.

    ``s`` is the ordinary squared error and ``recon_norm`` is ``|x_hat|``.
    """
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("squared error must be non-negative")
    r2 = np.square(np.asarray(recon_norm, dtype=np.float64))
    out = 0.5 * (1.0 - r2) ** 2 + s * (1.0 + r2) - 0.5 * s**2
    return float(out) if out.ndim == 0 else out


def quadratic_error_approx(s):
    """Small-error approximation ``2s - s^2/2`` valid when ``|x_hat| ~ 1``."""
    s = np.asarray(s, dtype=np.float64)
    out = 2.0 * s - 0.5 * s**2
    return float(out) if out.ndim == 0 else out
