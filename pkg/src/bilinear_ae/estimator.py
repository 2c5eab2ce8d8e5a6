"""scikit-learn style wrappers around the trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .kernels import DEFAULT_BLOCK_SIZE
from .model import encode
from .optim import OptimConfig
from .topk import topk_forward, topk_mask
from .trainer import TrainConfig, evaluate, train


class BilinearAutoencoder(TransformerMixin, BaseEstimator):
    """Bilinear autoencoder with the kernel-trick loss.

    ``fit`` normalises each row to unit length and holds out the last 5%
    for evaluation. ``transform`` returns the latent activations ``f``
    (or the mixed activations ``g`` when ``mixed_output`` is set).
    """

    def __init__(self, d_lat=256, variant="vanilla", d_mix=None, alpha=0.1, lr=0.01, steps=1024,
                 batch_size=512, alpha_warmup=256, ns_iters=5, block_size=DEFAULT_BLOCK_SIZE,
                 random_state=0, mixed_output=False):
        self.d_lat = d_lat
        self.variant = variant
        self.d_mix = d_mix
        self.alpha = alpha
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.alpha_warmup = alpha_warmup
        self.ns_iters = ns_iters
        self.block_size = block_size
        self.random_state = random_state
        self.mixed_output = mixed_output

    def _config(self, d_in: int) -> TrainConfig:
        optim = OptimConfig(lr=self.lr, steps=self.steps, alpha_warmup_steps=self.alpha_warmup,
                            ns_iters=self.ns_iters)
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(d_in=d_in, d_lat=self.d_lat, d_mix=self.d_mix, variant=self.variant,
                           alpha=self.alpha, optim=optim, batch_size=self.batch_size, seed=seed,
                           block_size=self.block_size)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        self.model_, self.report_ = train(self._config(X.shape[1]), rows=X)
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return X / np.where(norms > 0, norms, 1.0)

    def transform(self, X):
        X = self._check(X)
        acts = encode(self.model_, X)
        if self.mixed_output and acts.g is not None:
            return acts.g.astype(np.float64)
        return acts.f.astype(np.float64)

    def score(self, X, y=None):
        """Negative mean product-space error, so that higher is better."""
        X = self._check(X)
        return -evaluate(self.model_, [X], self.block_size).error


class TopKAutoencoder(TransformerMixin, BaseEstimator):
    """TopK sparse autoencoder baseline trained with the same optimiser."""

    def __init__(self, d_lat=256, k=50, lr=0.01, steps=1024, batch_size=512, ns_iters=5, random_state=0):
        self.d_lat = d_lat
        self.k = k
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.ns_iters = ns_iters
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        optim = OptimConfig(lr=self.lr, steps=self.steps, ns_iters=self.ns_iters)
        seed = 0 if self.random_state is None else int(self.random_state)
        config = TrainConfig(d_in=X.shape[1], d_lat=self.d_lat, variant="topk", k=self.k, optim=optim,
                             batch_size=self.batch_size, seed=seed, alpha=0.0)
        self.model_, self.report_ = train(config, rows=X)
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return X / np.where(norms > 0, norms, 1.0)

    def transform(self, X):
        X = self._check(X)
        m = self.model_
        pre = X @ m.W_enc.T.astype(np.float64) + m.b_enc
        return np.where(topk_mask(pre, m.k), pre, 0.0)

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        Z = check_array(Z, dtype=np.float64)
        return Z @ self.model_.W_dec.T.astype(np.float64) + self.model_.b_dec

    def score(self, X, y=None):
        """Negative mean product-space error of the reconstruction."""
        X = self._check(X)
        return -evaluate(self.model_, [X]).error

    def reconstruct(self, X):
        X = self._check(X)
        return topk_forward(self.model_, X)[0]
