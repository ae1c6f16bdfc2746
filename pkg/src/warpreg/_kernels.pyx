# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: bilinear warping (forward and adjoint) and blurring.

Semantics match ``_kernels_py`` exactly; see that module for the reference.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _locate(double c, Py_ssize_t n, Py_ssize_t *c0, double *frac,
                         bint *inside) noexcept nogil:
    cdef double cc = c
    inside[0] = (c > 0.0) and (c < n - 1.0)
    if cc < 0.0:
        cc = 0.0
    elif cc > n - 1.0:
        cc = n - 1.0
    cdef double f = floor(cc)
    if f > n - 2:
        f = n - 2
    if f < 0:
        f = 0
    c0[0] = <Py_ssize_t>f
    frac[0] = cc - f


def warp_bilinear(real[:, ::1] img, real[:, ::1] ci, real[:, ::1] cj):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t n_i = ci.shape[0], n_j = ci.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n_i, n_j), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, i0, j0, i1, j1
    cdef double fi, fj
    cdef bint ins
    cdef real a, b, top, bot, tfi, tfj
    with nogil:
        for r in range(n_i):
            for c in range(n_j):
                _locate(ci[r, c], h, &i0, &fi, &ins)
                _locate(cj[r, c], w, &j0, &fj, &ins)
                i1 = i0 + 1 if i0 + 1 < h else h - 1
                j1 = j0 + 1 if j0 + 1 < w else w - 1
                tfi = <real>fi
                tfj = <real>fj
                top = img[i0, j0] * (1 - tfj) + img[i0, j1] * tfj
                bot = img[i1, j0] * (1 - tfj) + img[i1, j1] * tfj
                out[r, c] = top * (1 - tfi) + bot * tfi
    return out_arr


def warp_bilinear_backward(real[:, ::1] img, real[:, ::1] ci, real[:, ::1] cj,
                           real[:, ::1] gout):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t n_i = ci.shape[0], n_j = ci.shape[1]
    dtype = np.float32 if real is float else np.float64
    g_img_acc = np.zeros((h, w), dtype=np.float64)
    g_ci_arr = np.empty((n_i, n_j), dtype=dtype)
    g_cj_arr = np.empty((n_i, n_j), dtype=dtype)
    cdef double[:, ::1] g_img = g_img_acc
    cdef real[:, ::1] g_ci = g_ci_arr
    cdef real[:, ::1] g_cj = g_cj_arr
    cdef Py_ssize_t r, c, i0, j0, i1, j1
    cdef double fi, fj
    cdef bint in_i, in_j
    cdef real a, b, cc, d, g, tfi, tfj
    cdef double gd
    with nogil:
        for r in range(n_i):
            for c in range(n_j):
                _locate(ci[r, c], h, &i0, &fi, &in_i)
                _locate(cj[r, c], w, &j0, &fj, &in_j)
                i1 = i0 + 1 if i0 + 1 < h else h - 1
                j1 = j0 + 1 if j0 + 1 < w else w - 1
                tfi = <real>fi
                tfj = <real>fj
                g = gout[r, c]
                a = img[i0, j0]
                b = img[i0, j1]
                cc = img[i1, j0]
                d = img[i1, j1]
                if in_i:
                    g_ci[r, c] = ((cc - a) * (1 - tfj) + (d - b) * tfj) * g
                else:
                    g_ci[r, c] = 0
                if in_j:
                    g_cj[r, c] = ((b - a) * (1 - tfi) + (d - cc) * tfi) * g
                else:
                    g_cj[r, c] = 0
                gd = g
                g_img[i0, j0] += (1 - tfi) * (1 - tfj) * gd
                g_img[i0, j1] += (1 - tfi) * tfj * gd
                g_img[i1, j0] += tfi * (1 - tfj) * gd
                g_img[i1, j1] += tfi * tfj * gd
    return g_img_acc.astype(dtype), g_ci_arr, g_cj_arr


def blur_clamped(real[:, ::1] grid, kernel):
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1]
    dtype = np.float32 if real is float else np.float64
    k_arr = np.ascontiguousarray(kernel, dtype=dtype)
    cdef real[::1] k = k_arr
    cdef Py_ssize_t nk = k.shape[0], rad = nk // 2
    tmp_arr = np.zeros((h, w), dtype=dtype)
    out_arr = np.zeros((h, w), dtype=dtype)
    cdef real[:, ::1] tmp = tmp_arr
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, t, s
    with nogil:
        for t in range(nk):
            for r in range(h):
                s = r + t - rad
                if s < 0:
                    s = 0
                elif s > h - 1:
                    s = h - 1
                for c in range(w):
                    tmp[r, c] += k[t] * grid[s, c]
        for t in range(nk):
            for c in range(w):
                s = c + t - rad
                if s < 0:
                    s = 0
                elif s > w - 1:
                    s = w - 1
                for r in range(h):
                    out[r, c] += k[t] * tmp[r, s]
    return out_arr


def im2col_same(real[:, :, ::1] x, Py_ssize_t k):
    """Zero-padded 'same' patches: row ``i*W + j`` holds ``x[i+a-r, j+b-r, :]``
    for ``(a, b)`` in row-major kernel order, channels fastest."""
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t r = k // 2
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.zeros((h * w, k * k * c), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t i, j, a, b, ch, si, sj, base
    with nogil:
        for i in range(h):
            for j in range(w):
                for a in range(k):
                    si = i + a - r
                    if si < 0 or si >= h:
                        continue
                    for b in range(k):
                        sj = j + b - r
                        if sj < 0 or sj >= w:
                            continue
                        base = (a * k + b) * c
                        for ch in range(c):
                            cols[i * w + j, base + ch] = x[si, sj, ch]
    return cols_arr


def col2im_same(real[:, ::1] dcols, Py_ssize_t h, Py_ssize_t w, Py_ssize_t c, Py_ssize_t k):
    """Adjoint of :func:`im2col_same`."""
    cdef Py_ssize_t r = k // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((h, w, c), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, a, b, ch, si, sj, base
    with nogil:
        for a in range(k):
            for b in range(k):
                base = (a * k + b) * c
                for i in range(h):
                    si = i + a - r
                    if si < 0 or si >= h:
                        continue
                    for j in range(w):
                        sj = j + b - r
                        if sj < 0 or sj >= w:
                            continue
                        for ch in range(c):
                            out[si, sj, ch] += dcols[i * w + j, base + ch]
    return out_arr
