"""Multi-resolution diffeomorphic demons, the classical non-rigid baseline.

Each iteration computes a Thirion demons force from the current warped
subject, exponentiates it by scaling and squaring, composes it into the
running field and regularises the result with a Gaussian. Levels run
coarse to fine over a 2x2-mean pyramid.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from . import metrics
from .errors import ConfigError
from .image import as_image, check_same_shape
from .warpfield import WarpField, apply, compose

MIN_LEVEL_SIZE = 8
MAX_SQUARING_STEP = 0.5


@dataclass(frozen=True)
class DemonsConfig:
    levels: int = 3
    iterations_per_level: int = 30
    smoothing_sigma: float = 1.0
    update_sigma: float = 1.0
    max_step: float = 2.0
    squarings: int | None = None   # None: choose per update

    def __post_init__(self):
        if self.levels < 1 or self.iterations_per_level < 1:
            raise ConfigError("levels and iterations_per_level must be >= 1")
        if self.smoothing_sigma < 0 or self.update_sigma < 0:
            raise ConfigError("sigmas must be >= 0")
        if self.max_step <= 0:
            raise ConfigError("max_step must be > 0")
        if self.squarings is not None and self.squarings < 0:
            raise ConfigError("squarings must be >= 0")


class TraceRow(NamedTuple):
    iteration: int
    level: int
    mse: float
    ssim: float


def gaussian_kernel1d(sigma):
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_smooth(grid, sigma):
    """Separable Gaussian blur, radius ceil(3 sigma), edge-clamped."""
    grid = np.asarray(grid)
    if sigma == 0:
        return grid.copy()
    return kernels.blur_clamped(grid, gaussian_kernel1d(sigma))


def smooth_field(field, sigma):
    if sigma == 0:
        return field
    return WarpField(gaussian_smooth(field.phi_i, sigma), gaussian_smooth(field.phi_j, sigma))


def demons_step(fixed, moving_warped, cfg=DemonsConfig()):
    """Thirion force ``(M - F) grad F / (|grad F|^2 + (M - F)^2)`` as a field update."""
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving_warped, dtype=np.float64)
    check_same_shape(fixed, moving)
    gi, gj = np.gradient(fixed)
    diff = moving - fixed
    denom = gi * gi + gj * gj + diff * diff
    ok = denom >= 1e-9
    scale = np.where(ok, diff / np.where(ok, denom, 1.0), 0.0)
    ui = scale * gi
    uj = scale * gj
    mag = np.sqrt(ui * ui + uj * uj)
    clip = np.where(mag > cfg.max_step, cfg.max_step / np.maximum(mag, 1e-300), 1.0)
    update = WarpField((ui * clip).astype(np.float32), (uj * clip).astype(np.float32))
    return smooth_field(update, cfg.update_sigma)


def auto_squarings(field):
    """Fewest squarings that bring the scaled field below half a pixel."""
    m = field.max_displacement()
    n = 0
    while m / 2.0 ** n >= MAX_SQUARING_STEP:
        n += 1
    return n


def exp_field(v, squarings):
    """Scaling and squaring: ``v / 2**n`` composed with itself ``n`` times."""
    out = v.scaled(1.0 / 2.0 ** squarings).astype(v.phi_i.dtype)
    for _ in range(squarings):
        out = compose(out, out)
    return out


def downsample(img):
    h, w = img.shape
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3)).astype(img.dtype)


def upsample_field(field, shape):
    """Bilinear 2x upsampling on pixel centres, displacements doubled."""
    dt = field.phi_i.dtype
    ci = (np.arange(shape[0], dtype=dt) + 0.5) / 2 - 0.5
    cj = (np.arange(shape[1], dtype=dt) + 0.5) / 2 - 0.5
    ii, jj = np.meshgrid(ci, cj, indexing="ij")
    return WarpField(2 * kernels.warp_bilinear(field.phi_i, ii, jj),
                     2 * kernels.warp_bilinear(field.phi_j, ii, jj))


def build_pyramid(img, levels):
    h, w = img.shape
    f = 2 ** (levels - 1)
    if h % f or w % f:
        raise ConfigError(f"image {img.shape} not divisible by 2**(levels-1) = {f}")
    if min(h, w) // f < MIN_LEVEL_SIZE:
        raise ConfigError(f"{levels} levels too deep for image {img.shape}")
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(downsample(pyr[-1]))
    return pyr[::-1]


def _trace_ssim(w, t):
    k = min(11, min(w.shape) - (1 - min(w.shape) % 2))
    return metrics.ssim(w, t, metrics.SsimParams(window_size=k))


def register_demons(subject, template, cfg=DemonsConfig(), trace=True):
    """Register ``subject`` onto ``template``.

    Returns ``(field, warped, rows)`` where ``apply(field, subject) == warped``
    and ``rows`` is the per-iteration MSE/SSIM trace (empty when ``trace`` is
    False). Trace metrics are measured at each level's own resolution.
    """
    subject = as_image(subject)
    template = as_image(template)
    check_same_shape(subject, template)
    s_pyr = build_pyramid(subject, cfg.levels)
    t_pyr = build_pyramid(template, cfg.levels)
    field = WarpField.zeros(*s_pyr[0].shape)
    rows = []
    it = 0
    for level, (s, t) in enumerate(zip(s_pyr, t_pyr)):
        if level:
            field = upsample_field(field, s.shape)
        for _ in range(cfg.iterations_per_level):
            warped = apply(field, s)
            update = demons_step(t, warped, cfg)
            n = cfg.squarings if cfg.squarings is not None else auto_squarings(update)
            field = compose(exp_field(update, n), field)
            field = smooth_field(field, cfg.smoothing_sigma)
            it += 1
            if trace:
                warped = apply(field, s)
                rows.append(TraceRow(it, level, metrics.mse(warped, t), _trace_ssim(warped, t)))
    warped = apply(field, subject)
    return field, warped, rows
