import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinear_ae.kernels import (KernelTiles, TileSchedule, blocked_quadratic_form, cross_kernel, mixed_kernel,
                                 ordered_mask, plain_kernel, prefix_totals)
from bilinear_ae.model import BilinearModel, ShapeError, VariantError, materialize_encoder
from bilinear_ae.oracles import random_model


def test_plain_kernel_matches_gram():
    rng = np.random.default_rng(0)
    m = random_model(rng, 5, 9)
    B = materialize_encoder(m)
    np.testing.assert_allclose(plain_kernel(m).K, B @ B.T, atol=1e-12)


def test_cross_kernel_with_self_is_plain():
    rng = np.random.default_rng(1)
    m = random_model(rng, 4, 6)
    np.testing.assert_allclose(cross_kernel(m.L, m.R, m.L, m.R), plain_kernel(m).K, atol=1e-12)
    with pytest.raises(ShapeError):
        cross_kernel(m.L, m.R, np.ones((2, 3)), np.ones((2, 3)))


def test_mixed_kernel_tiles_equal_dense():
    rng = np.random.default_rng(2)
    m = random_model(rng, 4, 11, "mixed", d_mix=5)
    D = m.D
    expected = D @ plain_kernel(m).K @ D.T
    for bs in (1, 3, 11, 64):
        np.testing.assert_allclose(mixed_kernel(m, bs).K, expected, atol=1e-12)
    with pytest.raises(VariantError):
        mixed_kernel(random_model(rng, 4, 3))


def test_schedule_covers_upper_triangle():
    s = TileSchedule(10, 3)
    assert s.n_blocks == 4
    assert s.pairs[0] == (0, 0) and len(s.pairs) == 10
    assert s.block(3) == slice(9, 10)


def test_prefix_weights():
    np.testing.assert_allclose(prefix_totals([0.25, 0.25, 0.5]), [1.0, 0.75, 0.5])
    W, c = ordered_mask(3)
    np.testing.assert_allclose(W, c[np.maximum.outer(np.arange(3), np.arange(3))])
    with pytest.raises(ValueError):
        prefix_totals([0.5, -0.1])


@settings(max_examples=30, deadline=None)
@given(d_lat=st.integers(1, 20), block=st.integers(1, 25), seed=st.integers(0, 10_000))
def test_blocked_form_block_size_invariant(d_lat, block, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3, d_lat)
    f = rng.standard_normal((4, d_lat))
    full = np.einsum("si,ij,sj->s", f, plain_kernel(m).K, f)
    got = blocked_quadratic_form(f, KernelTiles(m.L, m.R, block_size=block))
    np.testing.assert_allclose(got, full, rtol=1e-10, atol=1e-12)


def test_masked_tiles_match_dense_weighting():
    rng = np.random.default_rng(3)
    m = random_model(rng, 3, 7, "combined", d_mix=4)
    w = rng.random(7)
    tiles = KernelTiles(m.L, m.R, m.D, prefix_weights=w, block_size=2)
    M = m.D.T @ m.D
    W, _ = ordered_mask(7, w)
    np.testing.assert_allclose(tiles.dense(), (M @ plain_kernel(m).K @ M) * W, atol=1e-12)


def test_blocked_form_width_mismatch():
    m = BilinearModel(np.eye(3), np.eye(3))
    with pytest.raises(ShapeError):
        blocked_quadratic_form(np.ones((2, 4)), KernelTiles(m.L, m.R))
