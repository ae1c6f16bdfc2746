"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, or when
``WARPREG_PURE_PYTHON=1`` is set. Results agree with the compiled versions
to floating point rounding.
"""

import numpy as np


def _corners(coord, n):
    c = np.clip(coord, 0.0, n - 1.0)
    c0 = np.minimum(np.floor(c), max(n - 2, 0)).astype(np.intp)
    frac = c - c0
    inside = (coord > 0.0) & (coord < n - 1.0)
    return c0, frac, inside


def warp_bilinear(img, ci, cj):
    """Sample ``img`` at row coords ``ci`` and column coords ``cj`` (clamped)."""
    h, w = img.shape
    i0, fi, _ = _corners(ci, h)
    j0, fj, _ = _corners(cj, w)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fi = fi.astype(img.dtype, copy=False)
    fj = fj.astype(img.dtype, copy=False)
    top = img[i0, j0] * (1 - fj) + img[i0, j1] * fj
    bot = img[i1, j0] * (1 - fj) + img[i1, j1] * fj
    return (top * (1 - fi) + bot * fi).astype(img.dtype, copy=False)


def warp_bilinear_backward(img, ci, cj, gout):
    """Gradients of ``sum(gout * warp_bilinear(img, ci, cj))``.

    Returns ``(g_img, g_ci, g_cj)``. Coordinate gradients vanish where the
    coordinate was clamped.
    """
    h, w = img.shape
    dt = img.dtype
    i0, fi, in_i = _corners(ci, h)
    j0, fj, in_j = _corners(cj, w)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fi = fi.astype(dt, copy=False)
    fj = fj.astype(dt, copy=False)
    gout = gout.astype(dt, copy=False)

    a, b, c, d = img[i0, j0], img[i0, j1], img[i1, j0], img[i1, j1]
    g_ci = ((c - a) * (1 - fj) + (d - b) * fj) * gout
    g_cj = ((b - a) * (1 - fi) + (d - c) * fi) * gout
    g_ci = np.where(in_i, g_ci, 0).astype(dt, copy=False)
    g_cj = np.where(in_j, g_cj, 0).astype(dt, copy=False)

    n = h * w
    g_img = np.zeros(n, dtype=np.float64)
    for rows, cols, wt in (
        (i0, j0, (1 - fi) * (1 - fj)),
        (i0, j1, (1 - fi) * fj),
        (i1, j0, fi * (1 - fj)),
        (i1, j1, fi * fj),
    ):
        g_img += np.bincount((rows * w + cols).ravel(),
                             weights=(wt * gout).ravel(), minlength=n)
    return g_img.reshape(h, w).astype(dt), g_ci, g_cj


def blur_clamped(grid, kernel):
    """Separable correlation with an odd 1-D kernel, edge-replicated borders."""
    r = len(kernel) // 2
    if r == 0:
        return (grid * kernel[0]).astype(grid.dtype, copy=False)
    dt = grid.dtype
    k = kernel.astype(dt)
    h, w = grid.shape
    p = np.pad(grid, ((r, r), (0, 0)), mode="edge")
    tmp = np.zeros((h, w), dtype=dt)
    for t in range(len(k)):
        tmp += k[t] * p[t:t + h]
    p = np.pad(tmp, ((0, 0), (r, r)), mode="edge")
    out = np.zeros((h, w), dtype=dt)
    for t in range(len(k)):
        out += k[t] * p[:, t:t + w]
    return out


def im2col_same(x, k):
    """Zero-padded 'same' patches, shape ``(H*W, k*k*C)``, channels fastest."""
    h, w, c = x.shape
    r = k // 2
    xp = np.pad(x, ((r, r), (r, r), (0, 0)))
    cols = np.concatenate([xp[a:a + h, b:b + w, :] for a in range(k) for b in range(k)], axis=-1)
    return cols.reshape(h * w, k * k * c)


def col2im_same(dcols, h, w, c, k):
    """Adjoint of :func:`im2col_same`."""
    r = k // 2
    d = dcols.reshape(h, w, k * k * c)
    gp = np.zeros((h + 2 * r, w + 2 * r, c), dtype=dcols.dtype)
    idx = 0
    for a in range(k):
        for b in range(k):
            gp[a:a + h, b:b + w, :] += d[:, :, idx * c:(idx + 1) * c]
            idx += 1
    return gp[r:r + h, r:r + w, :].copy()
