import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinear_ae.optim import OptimConfig, alpha_at, lr_at, orthogonalize, shape_scale, step


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 40), cols=st.integers(1, 40), seed=st.integers(0, 10_000))
def test_orthogonalize_output_is_near_orthogonal(rows, cols, seed):
    G = np.random.default_rng(seed).standard_normal((rows, cols))
    sv = np.linalg.svd(orthogonalize(G), compute_uv=False)
    # square Gaussian matrices can carry tiny singular values that no fixed iteration count lifts
    if rows != cols:
        assert sv.min() >= 0.7
    assert sv.max() <= 1.3


def test_orthogonalize_preserves_singular_vectors():
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.standard_normal((12, 5)))
    V, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    G = U @ np.diag([3.0, 2.0, 1.0, 0.5, 0.2]) @ V.T
    np.testing.assert_allclose(orthogonalize(G), U @ V.T, atol=0.05)


def test_orthogonalize_edge_cases():
    assert not np.any(orthogonalize(np.zeros((3, 4))))
    with pytest.raises(ValueError):
        orthogonalize(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        orthogonalize(np.ones(3))


def test_lr_schedule_trapezoid():
    cfg = OptimConfig(lr=0.1, steps=100)
    assert lr_at(0, cfg) == 0.1 and lr_at(49, cfg) == 0.1
    assert lr_at(75, cfg) == pytest.approx(0.05)
    assert lr_at(99, cfg) == pytest.approx(0.002)
    with pytest.raises(ValueError):
        lr_at(100, cfg)


def test_alpha_warmup():
    cfg = OptimConfig(alpha_warmup_steps=10)
    assert alpha_at(0, 1.0, cfg) == 0.0
    assert alpha_at(5, 1.0, cfg) == 0.5
    assert alpha_at(50, 1.0, cfg) == 1.0
    assert alpha_at(0, 1.0, OptimConfig(alpha_warmup_steps=0)) == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(lr=0)
    with pytest.raises(ValueError):
        OptimConfig(warmup_frac=0)


def test_step_shapes_and_dtypes():
    cfg = OptimConfig(lr=0.1, steps=10)
    params = {"W": np.ones((4, 2), np.float32), "b": np.zeros(3, np.float32)}
    grads = {"W": np.random.default_rng(0).standard_normal((4, 2)), "b": np.ones(3)}
    out = step(params, grads, 0, cfg)
    assert out["W"].dtype == np.float32
    np.testing.assert_allclose(out["b"], -0.1)
    sv = np.linalg.svd(params["W"] - out["W"], compute_uv=False)
    np.testing.assert_allclose(sv, 0.1 * shape_scale((4, 2)), rtol=1e-3)
    with pytest.raises(ValueError):
        step(params, {"W": np.ones((2, 4))}, 0, cfg)
