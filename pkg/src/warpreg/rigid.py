"""Translation recovery by FFT phase correlation."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError
from .image import check_same_shape

EPS = 1e-12


@dataclass(frozen=True)
class Shift:
    di: int
    dj: int
    peak_response: float


def fft2(grid):
    """2-D discrete Fourier transform (any size, not just powers of two)."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise DimensionError(f"fft2 needs a non-empty 2-D grid, got shape {grid.shape}")
    return np.fft.fft2(grid)


def ifft2(grid):
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise DimensionError(f"ifft2 needs a non-empty 2-D grid, got shape {grid.shape}")
    return np.fft.ifft2(grid)


def hann2d(shape):
    return np.outer(np.hanning(shape[0]), np.hanning(shape[1]))


def cross_power(s, t, window=False):
    """Real part of the inverse normalised cross-power spectrum of ``s`` and ``t``."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    check_same_shape(s, t)
    for name, img in (("subject", s), ("template", t)):
        if np.ptp(img) <= 1e-12:
            raise DegenerateInputError(f"{name} image is constant; phase correlation is undefined")
    if window:
        hw = hann2d(s.shape)
        s = s * hw
        t = t * hw
    prod = fft2(s) * np.conj(fft2(t))
    return ifft2(prod / (np.abs(prod) + EPS)).real


def phase_correlate(s, t, window=False):
    """Integer shift ``(di, dj)`` such that ``s`` is ``t`` translated by it.

    Indices past the half-size wrap to negative shifts.
    """
    r = cross_power(s, t, window)
    h, w = r.shape
    k = int(np.argmax(r))
    i, j = divmod(k, w)
    if i > h // 2:
        i -= h
    if j > w // 2:
        j -= w
    return Shift(i, j, float(r.flat[k]))
