"""Image similarity: MSE, Gaussian-windowed SSIM and the weighted MSE-SSIM loss.

All accumulations run in float64 regardless of the input precision. SSIM is
evaluated only at window centres where the whole window fits inside the
image ("valid" mode).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ConfigError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ConfigError("k1, k2 and dynamic_range must be positive")

    @property
    def c1(self):
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.dynamic_range) ** 2


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ConfigError(f"invalid loss weights alpha={self.alpha}, beta={self.beta}")


DEFAULT_SSIM = SsimParams()
DEFAULT_WEIGHTS = LossWeights()


@lru_cache(maxsize=None)
def gaussian_window(size, sigma):
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _pair(w, t):
    w = np.asarray(w)
    t = np.asarray(t)
    if w.shape != t.shape:
        raise DimensionError(f"shape mismatch: {w.shape} vs {t.shape}")
    return w.astype(np.float64, copy=False), t.astype(np.float64, copy=False)


def _check_window(shape, p):
    if p.window_size > min(shape):
        raise ConfigError(f"SSIM window {p.window_size} does not fit image of shape {shape}")


def filter_valid(x, g):
    """Separable valid-mode correlation of a 2-D array with taps ``g``."""
    n = len(g)
    x = sliding_window_view(x, n, axis=0) @ g
    return sliding_window_view(x, n, axis=1) @ g


def filter_valid_adjoint(y, g):
    """Adjoint of :func:`filter_valid`: zero-padded full correlation with reversed taps."""
    n = len(g)
    gr = g[::-1]
    y = np.pad(y, ((n - 1, n - 1), (0, 0)))
    y = sliding_window_view(y, n, axis=0) @ gr
    y = np.pad(y, ((0, 0), (n - 1, n - 1)))
    return sliding_window_view(y, n, axis=1) @ gr


def mse(w, t):
    w, t = _pair(w, t)
    d = w - t
    return float(np.mean(d * d))


def _ssim_parts(w, t, p):
    g = gaussian_window(p.window_size, p.gaussian_sigma)
    mx = filter_valid(w, g)
    my = filter_valid(t, g)
    exx = filter_valid(w * w, g)
    eyy = filter_valid(t * t, g)
    exy = filter_valid(w * t, g)
    vx = exx - mx * mx
    vy = eyy - my * my
    cxy = exy - mx * my
    a1 = 2.0 * mx * my + p.c1
    a2 = 2.0 * cxy + p.c2
    b1 = mx * mx + my * my + p.c1
    b2 = vx + vy + p.c2
    return g, mx, my, a1, a2, b1, b2


def ssim_map_valid(w, t, p=DEFAULT_SSIM):
    """Per-window SSIM at every valid centre, shape ``(H - k + 1, W - k + 1)``."""
    w, t = _pair(w, t)
    _check_window(w.shape, p)
    _, _, _, a1, a2, b1, b2 = _ssim_parts(w, t, p)
    return (a1 * a2) / (b1 * b2)


def ssim(w, t, p=DEFAULT_SSIM):
    """Mean SSIM over all valid window centres."""
    return float(np.mean(ssim_map_valid(w, t, p)))


def ssim_map(w, t, p=DEFAULT_SSIM):
    """Full-size SSIM map; border pixels copy the nearest valid centre."""
    m = ssim_map_valid(w, t, p)
    r = p.window_size // 2
    return np.pad(m, r, mode="edge")


def ssim_with_grad(w, t, p=DEFAULT_SSIM):
    """Mean SSIM and its gradients with respect to ``w`` and ``t``."""
    w, t = _pair(w, t)
    _check_window(w.shape, p)
    g, mx, my, a1, a2, b1, b2 = _ssim_parts(w, t, p)
    s = (a1 * a2) / (b1 * b2)
    n = s.size
    inv = 1.0 / (b1 * b2 * n)
    sb1 = s / (b1 * n)
    sb2 = s / (b2 * n)
    # partials of the mean with respect to the five filtered maps
    d_exy = 2.0 * a1 * inv
    d_exx = -sb2
    d_mx = 2.0 * my * (a2 - a1) * inv - 2.0 * mx * sb1 + 2.0 * mx * sb2
    d_my = 2.0 * mx * (a2 - a1) * inv - 2.0 * my * sb1 + 2.0 * my * sb2
    adj = filter_valid_adjoint
    gxy = adj(d_exy, g)
    gsq = adj(d_exx, g)
    grad_w = adj(d_mx, g) + 2.0 * w * gsq + t * gxy
    grad_t = adj(d_my, g) + 2.0 * t * gsq + w * gxy
    return float(s.mean()), grad_w, grad_t


def msessim_loss(w, t, lw=DEFAULT_WEIGHTS, p=DEFAULT_SSIM):
    """``alpha * MSE - beta * (SSIM - 1)``; zero for identical images."""
    return lw.alpha * mse(w, t) - lw.beta * (ssim(w, t, p) - 1.0)
