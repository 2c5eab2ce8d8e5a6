import struct

import numpy as np
import pytest

from bilinear_ae.model import (BilinearModel, CheckpointError, ModelDims, ShapeError, VariantError, composite_form,
                               encode, init_model, latent_form, load_checkpoint, materialize_encoder,
                               save_checkpoint)
from bilinear_ae.topk import init_topk


def test_dims_validation():
    with pytest.raises(ValueError):
        ModelDims(0, 4)
    with pytest.raises(ValueError):
        ModelDims(4, 4, d_mix=5)


def test_variant_needs_mixer():
    L = np.ones((3, 2))
    with pytest.raises(VariantError):
        BilinearModel(L, L, None, "mixed")
    with pytest.raises(VariantError):
        BilinearModel(L, L, np.ones((2, 3)), "vanilla")
    with pytest.raises(VariantError):
        BilinearModel(L, L, variant="cubic")


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        BilinearModel(np.ones((3, 2)), np.ones((3, 4)))


@pytest.mark.parametrize("d_lat,d_in", [(4, 8), (8, 8), (20, 6)])
def test_init_rows_unit_norm(d_lat, d_in):
    m = init_model(ModelDims(d_in, d_lat), seed=0)
    assert m.L.dtype == np.float32
    np.testing.assert_allclose(np.linalg.norm(m.L, axis=1), 1.0, atol=1e-6)
    if d_lat <= d_in:
        np.testing.assert_allclose(m.L @ m.L.T, np.eye(d_lat), atol=1e-6)


def test_encode_matches_materialised_encoder():
    rng = np.random.default_rng(0)
    m = BilinearModel(rng.standard_normal((5, 4)), rng.standard_normal((5, 4)))
    x = rng.standard_normal((7, 4))
    X = np.einsum("si,sj->sij", x, x).reshape(7, -1)
    np.testing.assert_allclose(encode(m, x).f, X @ materialize_encoder(m).T, atol=1e-12)


def test_encode_rejects_wrong_width():
    m = init_model(ModelDims(4, 3))
    with pytest.raises(ShapeError):
        encode(m, np.ones((2, 5)))


def test_latent_form_and_composite():
    m = BilinearModel(np.eye(3), np.eye(3))
    np.testing.assert_array_equal(latent_form(m, 1), np.diag([0.0, 1.0, 0.0]))
    with pytest.raises(IndexError):
        latent_form(m, 3)
    np.testing.assert_allclose(composite_form(m, [0, 2], [2.0, -1.0]), np.diag([2.0, 0.0, -1.0]))


@pytest.mark.parametrize("variant,d_mix", [("vanilla", None), ("ordered", None), ("mixed", 3), ("combined", 2)])
def test_checkpoint_roundtrip(tmp_path, variant, d_mix):
    m = init_model(ModelDims(6, 5, d_mix), variant, seed=3)
    path = tmp_path / "m.bae"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.variant == variant
    for k, v in m.params().items():
        np.testing.assert_array_equal(back.params()[k], v)
    magic, version, code, d_in, d_lat, d_extra = struct.unpack_from("<4sIBIII", path.read_bytes())
    assert (magic, version, d_in, d_lat, d_extra) == (b"BAE1", 1, 6, 5, d_mix or 0)


def test_topk_checkpoint_roundtrip(tmp_path):
    m = init_topk(6, 10, 3, seed=1)
    save_checkpoint(m, tmp_path / "t.bae")
    back = load_checkpoint(tmp_path / "t.bae")
    assert back.k == 3
    np.testing.assert_array_equal(back.W_dec, m.W_dec)


def test_checkpoint_corruption(tmp_path):
    m = init_model(ModelDims(4, 3), seed=0)
    path = tmp_path / "m.bae"
    save_checkpoint(m, path)
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:10])
    (tmp_path / "trunc").write_bytes(raw[:-4])
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "version").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    for name in ("short", "trunc", "magic", "version"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)


def test_save_is_atomic_no_temp_left(tmp_path):
    save_checkpoint(init_model(ModelDims(4, 3)), tmp_path / "a.bae")
    assert [p.name for p in tmp_path.iterdir()] == ["a.bae"]
