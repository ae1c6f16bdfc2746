"""A small reverse-mode autodiff engine with the layers a 2-D U-Net needs.

Tensors are rank-3 ``[H, W, C]`` arrays (batch size is always one) or
scalars. Each op records its parents and a closure that maps the output
gradient to parent gradients; :meth:`Tensor.backward` replays them in
reverse topological order. Nothing is recorded when no input requires a
gradient, so inference pays no graph overhead.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import metrics
from .errors import DimensionError


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self):
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf needing it."""
        if grad is None:
            grad = np.ones_like(self.value)
        order = _topo_order(self)
        grads = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                g = np.asarray(g, dtype=node.value.dtype)
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("only scalar multiplication is supported")
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def _make(value, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, tuple(parents), backward)
    return Tensor(value)


def parameter(value):
    return Tensor(np.asarray(value), requires_grad=True)


def constant(value):
    return Tensor(np.asarray(value))


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    if not isinstance(b, Tensor):
        return _make(a.value + b, (a,), lambda g: (g,))
    if a.shape != b.shape:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def scale(a, c):
    return _make(a.value * c, (a,), lambda g: (g * c,))


def dot(a, c):
    """Scalar ``sum(a * c)`` against a constant array (gradient probes)."""
    c = np.asarray(c)
    return _make(np.sum(a.value.astype(np.float64) * c), (a,), lambda g: ((g * c).astype(a.dtype),))


# -------------------------------------------------------------------- layers

def conv2d(x, kernel, bias):
    """'same'-padded stride-1 cross-correlation, kernel ``[k, k, Cin, Cout]``."""
    k, k2, cin, cout = kernel.shape
    h, w, c = x.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d needs a square odd kernel, got {kernel.shape}")
    if c != cin or bias.shape != (cout,):
        raise DimensionError(f"conv2d: input {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    if k == 1:
        cols = x.value.reshape(h * w, c)
    else:
        cols = kernels.im2col_same(x.value, k)
    kmat = kernel.value.reshape(k * k * c, cout)
    out = (cols @ kmat + bias.value).reshape(h, w, cout)

    def backward(g):
        g2 = g.reshape(h * w, cout)
        g_k = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        g_b = g2.sum(axis=0) if bias.requires_grad else None
        g_x = None
        if x.requires_grad:
            dcols = g2 @ kmat.T
            if k == 1:
                g_x = dcols.reshape(h, w, c)
            else:
                g_x = kernels.col2im_same(dcols, h, w, c, k)
        return g_x, g_k, g_b

    return _make(out, (x, kernel, bias), backward)


def conv2d_transpose(x, kernel, bias):
    """Stride-2 transposed convolution with a ``[2, 2, Cin, Cout]`` kernel.

    Each input pixel scatters into its own 2x2 output block, so spatial
    size exactly doubles.
    """
    h, w, cin = x.shape
    if kernel.shape[:3] != (2, 2, cin):
        raise DimensionError(f"conv2d_transpose: input {x.shape}, kernel {kernel.shape}")
    cout = kernel.shape[3]
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d_transpose: bias {bias.shape}, expected ({cout},)")
    kmat = kernel.value.transpose(2, 0, 1, 3).reshape(cin, 4 * cout)
    x2 = x.value.reshape(h * w, cin)
    out = (x2 @ kmat).reshape(h, w, 2, 2, cout).transpose(0, 2, 1, 3, 4).reshape(2 * h, 2 * w, cout)
    out = out + bias.value

    def backward(g):
        g2 = g.reshape(h, 2, w, 2, cout).transpose(0, 2, 1, 3, 4).reshape(h * w, 4 * cout)
        g_x = (g2 @ kmat.T).reshape(h, w, cin) if x.requires_grad else None
        g_k = None
        if kernel.requires_grad:
            g_k = (x2.T @ g2).reshape(cin, 2, 2, cout).transpose(1, 2, 0, 3)
        g_b = g.sum(axis=(0, 1)) if bias.requires_grad else None
        return g_x, g_k, g_b

    return _make(out, (x, kernel, bias), backward)


def maxpool2(x):
    """2x2 max pooling; gradient goes to the first maximal element."""
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even spatial dims, got {x.shape}")
    blocks = x.value.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, c, 4)
    idx = np.argmax(blocks, axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        return (gb.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c),)

    return _make(out, (x,), backward)


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _make(x.value * mask, (x,), lambda g: (g * mask,))


def tanh(x):
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: (g * (1 - out * out),))


def linear(x):
    return x


def concat(xs):
    """Concatenate along the channel axis."""
    sizes = [t.shape[-1] for t in xs]
    out = np.concatenate([t.value for t in xs], axis=-1)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _make(out, tuple(xs), backward)


def dense_warp(src, flow):
    """Backward bilinear warp ``out[i, j] = src[i - flow0, j - flow1]``.

    ``src`` is ``[H, W, 1]``; ``flow`` is ``[H, W, 2]`` with channel 0 the row
    displacement. Differentiable in both arguments; coordinates are clamped
    to the image, which zeroes their gradient outside it.
    """
    h, w, c = src.shape
    if c != 1 or flow.shape != (h, w, 2):
        raise DimensionError(f"dense_warp: src {src.shape}, flow {flow.shape}")
    dt = src.dtype
    ii, jj = np.meshgrid(np.arange(h, dtype=dt), np.arange(w, dtype=dt), indexing="ij")
    img = np.ascontiguousarray(src.value[..., 0])
    ci = ii - flow.value[..., 0]
    cj = jj - flow.value[..., 1]
    out = kernels.warp_bilinear(img, ci, cj)[..., None]

    def backward(g):
        g_img, g_ci, g_cj = kernels.warp_bilinear_backward(img, ci, cj, g[..., 0])
        return g_img[..., None], np.stack([-g_ci, -g_cj], axis=-1)

    return _make(out, (src, flow), backward)


# -------------------------------------------------------------------- losses

def mse_loss(w, t):
    """Mean squared error against a constant target (float64 scalar)."""
    t = np.asarray(t)
    if w.shape != t.shape:
        raise DimensionError(f"mse_loss: {w.shape} vs {t.shape}")
    d = w.value.astype(np.float64) - t
    n = d.size
    return _make(np.mean(d * d), (w,), lambda g: ((g * (2.0 / n) * d).astype(w.dtype),))


def ssim_loss_term(w, t, p=metrics.DEFAULT_SSIM):
    """Mean windowed SSIM of ``w`` (``[H, W, 1]``) against constant ``t``."""
    t = np.asarray(t)
    if w.shape != t.shape:
        raise DimensionError(f"ssim: {w.shape} vs {t.shape}")
    val, g_w, _ = metrics.ssim_with_grad(w.value[..., 0], t[..., 0], p)
    return _make(np.asarray(val), (w,), lambda g: ((g * g_w[..., None]).astype(w.dtype),))


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ValueError("need lr > 0 and 0 <= beta1, beta2 < 1")


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params`` (name -> array)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"adam: gradient for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype)
    return params, state
