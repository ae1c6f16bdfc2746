import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpreg import dataset as D
from warpreg import metrics
from warpreg.errors import ConfigError, FormatError, SpecError
from warpreg.warpfield import max_gradient


def test_phantom_deterministic_and_distinct():
    a = D.gen_phantom(64, 3)
    np.testing.assert_array_equal(a, D.gen_phantom(64, 3))
    assert a.dtype == np.float32 and a.min() == 0.0 and a.max() == 1.0
    assert metrics.mse(a, D.gen_phantom(64, 4)) > 0.001


def test_phantom_too_small():
    with pytest.raises(ConfigError):
        D.gen_phantom(8, 0)


@settings(max_examples=100, deadline=None)
@given(kind=st.sampled_from(D.WARP_KINDS), frac=st.floats(0.01, 1.0), seed=st.integers(0, 2 ** 31 - 1))
def test_fields_respect_bounds(kind, frac, seed):
    amp = frac * D.max_amplitude(64)
    f = D.gen_field(D.WarpSpec(kind, amp, seed=seed), 64)
    assert f.max_displacement() <= amp * (1 + 1e-4) + 1e-6
    assert max_gradient(f) < D.GRADIENT_BOUND


def test_amplitude_over_cap():
    with pytest.raises(SpecError):
        D.gen_field(D.WarpSpec("linear", D.max_amplitude(64) + 1), 64)


def test_gradient_violation_is_rejected():
    params = {"freq_i": 8, "freq_j": 8, "phase": [0.0, 0.0], "amplitude": 3.0}
    with pytest.raises(SpecError, match="invertibility"):
        D.gen_field(D.WarpSpec("sinusoidal", 5.0, params=params), 64)


def test_unknown_kind():
    with pytest.raises(SpecError):
        D.WarpSpec("twirl", 1.0)


def test_zero_amplitude_gives_zero_field():
    for kind in D.WARP_KINDS:
        assert D.gen_field(D.WarpSpec(kind, 0.0, seed=1), 64).max_displacement() == 0.0


def test_sinusoid_integer_frequency_has_zero_mean():
    for seed in range(10):
        f = D.gen_field(D.WarpSpec("sinusoidal", 4.0, seed=seed), 64)
        assert abs(float(f.phi_i.mean())) < 1e-5 and abs(float(f.phi_j.mean())) < 1e-5


def test_sinusoid_axis_separation():
    f = D.gen_field(D.WarpSpec("sinusoidal", 4.0, seed=2), 64)
    np.testing.assert_allclose(f.phi_i, f.phi_i[:, :1].repeat(64, axis=1), atol=1e-6)
    np.testing.assert_allclose(f.phi_j, f.phi_j[:1, :].repeat(64, axis=0), atol=1e-6)


def test_linear_field_is_affine():
    f = D.gen_field(D.WarpSpec("linear", 4.0, seed=5), 64)
    for comp in (f.phi_i, f.phi_j):
        c = comp.astype(np.float64)
        assert np.abs(np.diff(c, 2, axis=0)).max() < 1e-4
        assert np.abs(np.diff(c, 2, axis=1)).max() < 1e-4


def test_spherical_compact_support():
    p = {"center": [32.0, 32.0], "radius": 10.0, "strength": 1.0}
    f = D.gen_field(D.WarpSpec("spherical", 2.0, params=p), 64)
    assert f.phi_i[0, 0] == 0 and f.phi_j[60, 60] == 0
    assert f.max_displacement() > 0.9


def test_sinusoidal_roundtrip():
    img = D.gen_phantom(64, 9)
    f = D.gen_field(D.WarpSpec("sinusoidal", 2.0, seed=3), 64)
    # sharp phantom edges: the residual is resampling blur, the inverse itself is exact
    assert D.roundtrip_error(f, img) < 0.03


def test_split_sizes_and_no_leakage():
    val = D.split_bases(200, 0)
    assert len(val) == 40
    ds = D.generate(20, 5, 32, 1)
    assert len(ds.train_pairs()) == 80 and len(ds.val_pairs()) == 20
    train_bases = {p.base_id for p in ds.train_pairs()}
    val_bases = {p.base_id for p in ds.val_pairs()}
    assert not train_bases & val_bases
    assert D.split_bases(200, 0) == val and D.split_bases(200, 1) != val


def test_split_needs_two_images():
    with pytest.raises(ConfigError):
        D.split_bases(1, 0)


def test_truth_is_closer_than_subject():
    ds = D.generate(6, 3, 64, 2)
    for p in ds.pairs:
        assert metrics.ssim(p.roundtrip_truth, p.template) > metrics.ssim(p.subject, p.template)


def test_roundtrip_truth_error():
    ds = D.generate(4, 5, 64, 3)
    errs = [D.roundtrip_error(p.applied_field, p.template) for p in ds.pairs]
    assert max(errs) < 0.03


def test_external_base_images():
    imgs = [np.random.default_rng(k).random((48, 40)) for k in range(3)]
    ds = D.generate(0, 2, 32, 0, base_images=imgs)
    assert len(ds) == 6 and ds.pairs[0].template.shape == (32, 32)


def test_manifest_byte_identical(tmp_path):
    a = D.make_dataset(5, 2, 32, 4, tmp_path / "a")
    b = D.make_dataset(5, 2, 32, 4, tmp_path / "b")
    assert open(a, "rb").read() == open(b, "rb").read()
    for line in open(a):
        for rel in line.split()[2:]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_manifest_roundtrip(tmp_path):
    ds = D.generate(5, 2, 32, 4)
    loaded = D.load_dataset(D.make_dataset(5, 2, 32, 4, tmp_path))
    assert [p.pair_id for p in loaded.pairs] == [p.pair_id for p in ds.pairs]
    assert [p.split for p in loaded.pairs] == [p.split for p in ds.pairs]
    # 8-bit storage
    assert np.abs(loaded.pairs[0].subject - ds.pairs[0].subject).max() <= 0.5 / 255 + 1e-6


def test_malformed_manifest(tmp_path):
    m = tmp_path / "manifest.txt"
    m.write_text("only three fields\n")
    with pytest.raises(FormatError, match=":1:"):
        D.load_dataset(m)


def test_resize_preserves_constant():
    out = D.resize(np.full((50, 70), 0.3), 32)
    np.testing.assert_allclose(out, 0.3, atol=1e-6)
    assert math.isclose(float(D.max_amplitude(128)), 10.0)
