"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``WARPREG_PURE_PYTHON=1`` to force
the numpy fallback; ``BACKEND`` names whichever one was loaded.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("WARPREG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _real(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {backend!r}")


def warp_bilinear(img, ci, cj, backend=None):
    impl = _pick(backend)
    dt = np.result_type(img.dtype, np.float32)
    return impl.warp_bilinear(_real(img, dt), _real(ci, dt), _real(cj, dt))


def warp_bilinear_backward(img, ci, cj, gout, backend=None):
    impl = _pick(backend)
    dt = np.result_type(img.dtype, np.float32)
    return impl.warp_bilinear_backward(_real(img, dt), _real(ci, dt),
                                       _real(cj, dt), _real(gout, dt))


def blur_clamped(grid, kernel, backend=None):
    impl = _pick(backend)
    dt = np.result_type(grid.dtype, np.float32)
    return impl.blur_clamped(_real(grid, dt), np.asarray(kernel, dtype=dt))


def im2col_same(x, k, backend=None):
    impl = _pick(backend)
    dt = np.result_type(x.dtype, np.float32)
    return impl.im2col_same(_real(x, dt), int(k))


def col2im_same(dcols, h, w, c, k, backend=None):
    impl = _pick(backend)
    dt = np.result_type(dcols.dtype, np.float32)
    return impl.col2im_same(_real(dcols, dt), int(h), int(w), int(c), int(k))
