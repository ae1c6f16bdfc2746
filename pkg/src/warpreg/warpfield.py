"""Dense displacement fields under the backward-warp convention.

A field stores, for every output pixel ``(i, j)``, the row and column
displacement ``(phi_i, phi_j)``. Applying it pulls intensities from the
source: ``W[i, j] = S[i - phi_i[i, j], j - phi_j[i, j]]``, with bilinear
interpolation and edge clamping.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._io import atomic_write
from .errors import DimensionError, FormatError
from .image import as_image

MAGIC = b"WRP1"
DEFAULT_INVERT_ITERATIONS = 20


@dataclass(frozen=True, eq=False)
class WarpField:
    phi_i: np.ndarray
    phi_j: np.ndarray

    def __post_init__(self):
        if self.phi_i.shape != self.phi_j.shape or self.phi_i.ndim != 2:
            raise DimensionError(
                f"phi_i {self.phi_i.shape} and phi_j {self.phi_j.shape} must be equal 2-D shapes")

    @classmethod
    def zeros(cls, height, width, dtype=np.float32):
        return cls(np.zeros((height, width), dtype), np.zeros((height, width), dtype))

    @classmethod
    def constant(cls, height, width, di, dj, dtype=np.float32):
        return cls(np.full((height, width), di, dtype), np.full((height, width), dj, dtype))

    @classmethod
    def from_array(cls, arr):
        """Build from an ``[H, W, 2]`` array, channel 0 = phi_i."""
        arr = np.asarray(arr)
        return cls(np.ascontiguousarray(arr[..., 0]), np.ascontiguousarray(arr[..., 1]))

    @property
    def shape(self):
        return self.phi_i.shape

    @property
    def height(self):
        return self.phi_i.shape[0]

    @property
    def width(self):
        return self.phi_i.shape[1]

    def as_array(self):
        return np.stack([self.phi_i, self.phi_j], axis=-1)

    def scaled(self, factor):
        return WarpField(self.phi_i * factor, self.phi_j * factor)

    def astype(self, dtype):
        return WarpField(self.phi_i.astype(dtype), self.phi_j.astype(dtype))

    def max_displacement(self):
        return float(np.sqrt(self.phi_i.astype(np.float64) ** 2 + self.phi_j.astype(np.float64) ** 2).max())

    def __add__(self, other):
        return WarpField(self.phi_i + other.phi_i, self.phi_j + other.phi_j)


def _grid(shape, dtype):
    h, w = shape
    ii, jj = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij")
    return ii, jj


def _check(field, shape):
    if field.shape != tuple(shape):
        raise DimensionError(f"field shape {field.shape} does not match {tuple(shape)}")


def sample_at(field, ci, cj):
    """Evaluate both field components bilinearly at coordinates (ci, cj)."""
    return WarpField(kernels.warp_bilinear(field.phi_i, ci, cj),
                     kernels.warp_bilinear(field.phi_j, ci, cj))


def apply(field, src):
    """Warp ``src`` by ``field`` (backward mapping)."""
    src = np.asarray(src)
    if src.ndim != 2:
        src = as_image(src)
    _check(field, src.shape)
    dt = np.result_type(src.dtype, np.float32)
    ii, jj = _grid(src.shape, dt)
    return kernels.warp_bilinear(src.astype(dt, copy=False), ii - field.phi_i, jj - field.phi_j)


def compose(f, g):
    """Field ``h`` with ``apply(h, x) ~= apply(f, apply(g, x))``.

    ``h(p) = f(p) + g(p - f(p))``: first pull through ``f``, then through ``g``.
    """
    if f.shape != g.shape:
        raise DimensionError(f"cannot compose fields of shape {f.shape} and {g.shape}")
    dt = np.result_type(f.phi_i.dtype, g.phi_i.dtype)
    ii, jj = _grid(f.shape, dt)
    g_at = sample_at(g.astype(dt), ii - f.phi_i, jj - f.phi_j)
    return WarpField(f.phi_i + g_at.phi_i, f.phi_j + g_at.phi_j)


def invert(field, iterations=DEFAULT_INVERT_ITERATIONS):
    """Approximate inverse by fixed-point iteration ``v <- -field(p - v(p))``.

    The returned ``v`` undoes ``field`` in either order of application:
    ``apply(v, apply(field, x)) ~= x``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    dt = field.phi_i.dtype
    ii, jj = _grid(field.shape, dt)
    vi = np.zeros(field.shape, dt)
    vj = np.zeros(field.shape, dt)
    for _ in range(iterations):
        s = sample_at(field, ii - vi, jj - vj)
        vi, vj = -s.phi_i, -s.phi_j
    return WarpField(vi, vj)


def jacobian_determinant(field):
    """Determinant of the Jacobian of ``p -> p - phi(p)`` (central differences)."""
    di_di, di_dj = np.gradient(field.phi_i.astype(np.float64))
    dj_di, dj_dj = np.gradient(field.phi_j.astype(np.float64))
    return (1.0 - di_di) * (1.0 - dj_dj) - di_dj * dj_di


def max_gradient(field):
    """Largest spectral norm of the displacement Jacobian over all pixels."""
    a, b = np.gradient(field.phi_i.astype(np.float64))
    c, d = np.gradient(field.phi_j.astype(np.float64))
    # closed-form largest singular value of [[a, b], [c, d]]
    s = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.sqrt(np.maximum(s * s - 4.0 * det * det, 0.0))
    return float(np.sqrt(0.5 * (s + disc)).max())


def save_field(field, path):
    h, w = field.shape
    with atomic_write(path) as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(field.phi_i, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(field.phi_j, dtype="<f4").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12:
        raise FormatError(f"warp file too short for header: {len(buf)} bytes")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    h, w = struct.unpack_from("<II", buf, 4)
    expected = 12 + 2 * h * w * 4
    if len(buf) != expected:
        raise FormatError(f"warp payload length mismatch: expected {expected} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=12).astype(np.float32)
    return WarpField(data[:h * w].reshape(h, w).copy(), data[h * w:].reshape(h, w).copy())
