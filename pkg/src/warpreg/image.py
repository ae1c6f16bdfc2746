"""Grayscale images as 2-D float32 arrays, Netpbm I/O and bilinear sampling.

Images are plain ``numpy`` arrays of shape ``(height, width)``. Intensities
live in [0, 1] after :func:`normalize` or :func:`load_pgm`.
"""

import numpy as np

from . import kernels
from ._io import atomic_write
from .errors import DimensionError, FormatError

DTYPE = np.float32


def as_image(data):
    img = np.asarray(data, dtype=DTYPE)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError(f"expected a non-empty 2-D image, got shape {img.shape}")
    return img


def check_same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def _read_token(buf, pos):
    """Return (token, next position), skipping whitespace and # comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"unexpected end of header at byte offset {pos}")
    return buf[start:pos], pos


def _read_int(buf, pos, what):
    tok, nxt = _read_token(buf, pos)
    if not tok.isdigit():
        raise FormatError(f"malformed {what} {tok!r} at byte offset {nxt - len(tok)}")
    return int(tok), nxt


def load_pgm(path):
    """Read a binary (P5) PGM, scaling intensities to [0, 1] by maxval."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise FormatError(f"unsupported magic {buf[:2]!r}; only binary P5 PGM is read")
    pos = 2
    width, pos = _read_int(buf, pos, "width")
    height, pos = _read_int(buf, pos, "height")
    maxval, pos = _read_int(buf, pos, "maxval")
    if width == 0 or height == 0:
        raise FormatError(f"zero image dimension in header ending at byte offset {pos}")
    if not 0 < maxval < 65536:
        raise FormatError(f"maxval {maxval} out of range at byte offset {pos}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"missing whitespace after maxval at byte offset {pos}")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = buf[pos:pos + need]
    if len(payload) != need:
        raise FormatError(
            f"pixel data truncated at byte offset {pos + len(payload)}: "
            f"expected {need} bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return (data.astype(np.float64) / maxval).astype(DTYPE)


def _to_bytes(img):
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_pgm(img, path):
    """Write ``img`` as an 8-bit P5 PGM (values clamped, rounded half up)."""
    img = as_image(img)
    h, w = img.shape
    with atomic_write(path) as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(_to_bytes(img).tobytes())


def normalize(img):
    """Min-max rescale to [0, 1]; a constant image maps to all zeros."""
    img = as_image(img)
    lo = float(img.min())
    hi = float(img.max())
    if hi == lo:
        return np.zeros_like(img)
    return ((img.astype(np.float64) - lo) / (hi - lo)).astype(DTYPE)


def sample_bilinear(img, y, x):
    """Bilinear intensity at real coordinates (y, x), clamped to the image."""
    img = np.asarray(img)
    ci = np.array([[y]], dtype=np.float64)
    cj = np.array([[x]], dtype=np.float64)
    return float(kernels.warp_bilinear(img.astype(np.float64), ci, cj)[0, 0])


def sample_grid(img, ci, cj):
    """Vectorised :func:`sample_bilinear` over coordinate arrays."""
    return kernels.warp_bilinear(img, ci, cj)


def write_overlay(w, t, path):
    """False-colour PPM: ``w`` in green, ``t`` in magenta, agreement in grey."""
    w = as_image(w)
    t = as_image(t)
    check_same_shape(w, t)
    h, width = w.shape
    g = _to_bytes(w)
    m = _to_bytes(t)
    rgb = np.stack([m, g, m], axis=-1)
    with atomic_write(path) as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, h))
        fh.write(rgb.tobytes())
