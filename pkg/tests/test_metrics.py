import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpreg import autodiff as ad
from warpreg.errors import ConfigError, DimensionError
from warpreg.metrics import (DEFAULT_SSIM, LossWeights, SsimParams, mse,
                             msessim_loss, ssim, ssim_map, ssim_map_valid)


def _brute_ssim(x, y, p=DEFAULT_SSIM):
    """Direct per-window evaluation with an explicit 2-D Gaussian window."""
    k = p.window_size
    ax = np.arange(k) - (k - 1) / 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * p.gaussian_sigma ** 2))
    g /= g.sum()
    vals = []
    for i in range(x.shape[0] - k + 1):
        for j in range(x.shape[1] - k + 1):
            a = x[i:i + k, j:j + k]
            b = y[i:i + k, j:j + k]
            mx, my = (g * a).sum(), (g * b).sum()
            vx = (g * (a - mx) ** 2).sum()
            vy = (g * (b - my) ** 2).sum()
            cxy = (g * (a - mx) * (b - my)).sum()
            vals.append((2 * mx * my + p.c1) * (2 * cxy + p.c2)
                        / ((mx ** 2 + my ** 2 + p.c1) * (vx + vy + p.c2)))
    return np.mean(vals)


def test_mse_cases():
    assert mse(np.ones((4, 4)), np.ones((4, 4))) == 0.0
    assert mse(np.zeros((3, 5)), np.ones((3, 5))) == 1.0
    assert mse([[0, 0.5]], [[0.5, 0.5]]) == 0.125


def test_mse_shape_mismatch():
    with pytest.raises(DimensionError):
        mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ssim_matches_bruteforce(rng):
    x = rng.random((16, 19))
    y = np.clip(x + 0.2 * rng.normal(size=x.shape), 0, 1)
    assert ssim(x, y) == pytest.approx(_brute_ssim(x, y), abs=1e-12)


def test_ssim_identical_is_one(rng):
    x = rng.random((20, 20))
    assert abs(ssim(x, x) - 1.0) < 1e-9


@pytest.mark.parametrize("a,b", [(0.2, 0.7), (0.0, 1.0), (0.5, 0.45)])
def test_ssim_constants_closed_form(a, b):
    p = DEFAULT_SSIM
    expected = (2 * a * b + p.c1) / (a * a + b * b + p.c1)
    got = ssim(np.full((16, 16), a), np.full((16, 16), b))
    assert got == pytest.approx(expected, abs=1e-9)


def test_ssim_negative_for_inverted_checkerboard():
    ii, jj = np.indices((24, 24))
    x = ((ii + jj) % 2).astype(float)
    assert ssim(x, 1 - x) < 0


def test_ssim_window_must_fit():
    with pytest.raises(ConfigError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ConfigError):
        SsimParams(window_size=4)


def test_ssim_map_properties(rng):
    x = rng.random((32, 32))
    np.testing.assert_allclose(ssim_map(x, x), 1.0)
    y = x.copy()
    y[:6, :6] = rng.random((6, 6))
    m = ssim_map(x, y)
    assert m.shape == x.shape
    np.testing.assert_allclose(m[20:, 20:], 1.0)
    assert m[0, 0] < 0.99
    assert np.mean(ssim_map_valid(x, y)) == pytest.approx(ssim(x, y))


def test_msessim_loss_cases(rng):
    x = rng.random((16, 16))
    assert msessim_loss(x, x) == pytest.approx(0.0, abs=1e-12)
    y = rng.random((16, 16))
    assert msessim_loss(x, y, LossWeights(0.0, 1.0)) == 1.0 - ssim(x, y)
    z, o = np.zeros((16, 16)), np.ones((16, 16))
    p = DEFAULT_SSIM
    s = p.c1 / (1 + p.c1)
    assert msessim_loss(z, o) == pytest.approx(10 * 1.0 - (s - 1), abs=1e-9)


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(0, 0)
    with pytest.raises(ConfigError):
        LossWeights(-1, 1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_symmetry_and_nonnegative_loss(seed):
    g = np.random.default_rng(seed)
    a = g.random((14, 14))
    b = g.random((14, 14)) * g.uniform(0, 1)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0
    assert msessim_loss(a, b) >= 0.0
    assert mse(a, b) >= 0.0


def test_mse_zero_iff_equal(rng):
    a = rng.random((5, 5))
    b = a.copy()
    assert mse(a, b) == 0.0
    b[2, 3] = np.nextafter(b[2, 3], 2.0)
    assert mse(a, b) > 0.0


def test_differentiable_path_matches_plain(rng):
    for _ in range(5):
        a = rng.random((32, 32))
        b = rng.random((32, 32))
        w = ad.parameter(a[..., None])
        t = b[..., None]
        assert abs(ad.mse_loss(w, t).item() - mse(a, b)) < 1e-6
        assert abs(ad.ssim_loss_term(w, t).item() - ssim(a, b)) < 1e-6
