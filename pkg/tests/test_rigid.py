import numpy as np
import pytest

from warpreg.errors import DegenerateInputError, DimensionError
from warpreg.rigid import fft2, ifft2, phase_correlate


def brute_force_shift(s, t):
    """Argmax over all circular offsets of the spatial cross-correlation."""
    h, w = s.shape
    best, arg = -np.inf, None
    for di in range(h):
        for dj in range(w):
            v = np.sum(s * np.roll(t, (di, dj), axis=(0, 1)))
            if v > best:
                best, arg = v, (di, dj)
    di, dj = arg
    return (di - h if di > h // 2 else di, dj - w if dj > w // 2 else dj)


def test_fft_cases(rng):
    x = np.ones((6, 6))
    X = fft2(x)
    assert X[0, 0] == pytest.approx(36)
    assert np.abs(X.flat[1:]).max() < 1e-9
    imp = np.zeros((4, 4))
    imp[0, 0] = 1
    np.testing.assert_allclose(fft2(imp), np.ones((4, 4)))
    y = rng.normal(size=(7, 10))
    Y = fft2(y)
    assert np.sum(y ** 2) == pytest.approx(np.sum(np.abs(Y) ** 2) / y.size)
    np.testing.assert_allclose(ifft2(Y).real, y, rtol=1e-6, atol=1e-12)


def test_fft_empty():
    with pytest.raises(DimensionError):
        fft2(np.zeros((0, 3)))


def test_identity(textured):
    s = phase_correlate(textured, textured)
    assert (s.di, s.dj) == (0, 0)
    assert s.peak_response == pytest.approx(1.0)


def test_known_shift(textured):
    s = phase_correlate(np.roll(textured, (5, -3), axis=(0, 1)), textured)
    assert (s.di, s.dj) == (5, -3)


def test_intensity_offset_ignored(textured):
    moved = np.roll(textured, (2, 2), axis=(0, 1)) + 0.3
    s = phase_correlate(moved, textured)
    assert (s.di, s.dj) == (2, 2)


def test_matches_brute_force(rng):
    img = rng.random((24, 20))
    for _ in range(3):
        d = tuple(rng.integers(-5, 6, 2))
        s = np.roll(img, d, axis=(0, 1))
        r = phase_correlate(s, img)
        assert (r.di, r.dj) == brute_force_shift(s, img) == d


def test_antisymmetry_and_scale_invariance(textured):
    a = np.roll(textured, (4, 7), axis=(0, 1))
    ab = phase_correlate(a, textured)
    ba = phase_correlate(textured, a)
    assert (ab.di, ab.dj) == (-ba.di, -ba.dj)
    sc = phase_correlate(3.5 * a, 0.2 * textured)
    assert (sc.di, sc.dj) == (ab.di, ab.dj)


def test_windowed_non_circular(textured):
    big = np.pad(textured, 16, mode="reflect")
    s = big[16 + 3:16 + 3 + 64, 16 - 2:16 - 2 + 64]
    r = phase_correlate(textured, s, window=True)
    assert (r.di, r.dj) == (3, -2)


def test_constant_rejected(textured):
    with pytest.raises(DegenerateInputError):
        phase_correlate(np.full((8, 8), 0.4), textured[:8, :8])
