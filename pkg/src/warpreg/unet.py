"""U-Net warp-field regressor: construction, training, inference, checkpoints.

The network takes the two-channel stack ``[S, T]`` and predicts a
two-channel displacement field (channel 0 = row displacement ``phi_i``,
channel 1 = column displacement ``phi_j``). The subject is then warped by
that field, and the loss compares the warped image with the template only.
"""

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import metrics
from ._io import atomic_write, rng_stream
from .errors import ConfigError, DimensionError, FormatError
from .image import as_image, save_pgm
from .warpfield import WarpField

MAGIC = b"UNT1"
VERSION = 1
CHANNELS_IJ = 0     # channel-convention tag: output channel 0 is phi_i
DROPOUT_RATE = 0.5
LOSS_MODES = ("msessim", "ssim_only", "mse_only")


@dataclass(frozen=True)
class UNetConfig:
    input_size: int = 64
    depth: int = 3
    base_width: int = 8

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_width < 2:
            raise ConfigError(f"base_width must be >= 2, got {self.base_width}")
        if self.input_size < 2 ** self.depth or self.input_size % 2 ** self.depth:
            raise ConfigError(
                f"input_size {self.input_size} must be divisible by 2**depth = {2 ** self.depth}")

    def width(self, level):
        """Channels at encoder level ``level`` (1-based); ``depth + 1`` is the bottleneck."""
        return self.base_width * 2 ** (level - 1)

    @property
    def bottleneck(self):
        return self.width(self.depth + 1)


PRESETS = {
    "paper": UNetConfig(input_size=128, depth=4, base_width=64),
    "desk": UNetConfig(input_size=64, depth=3, base_width=8),
}


def layer_shapes(cfg):
    """Ordered ``name -> shape`` for every weight tensor of the network."""
    shapes = {}

    def conv(name, k, cin, cout):
        shapes[f"{name}/kernel"] = (k, k, cin, cout)
        shapes[f"{name}/bias"] = (cout,)

    cin = 2
    for lvl in range(1, cfg.depth + 1):
        w = cfg.width(lvl)
        conv(f"enc{lvl}_conv1", 3, cin, w)
        conv(f"enc{lvl}_conv2", 3, w, w)
        cin = w
    conv("mid_conv1", 3, cin, cfg.bottleneck)
    conv("mid_conv2", 3, cfg.bottleneck, cfg.bottleneck)
    cin = cfg.bottleneck
    for lvl in range(cfg.depth, 0, -1):
        w = cfg.width(lvl)
        shapes[f"dec{lvl}_up/kernel"] = (2, 2, cin, w)
        shapes[f"dec{lvl}_up/bias"] = (w,)
        conv(f"dec{lvl}_conv1", 3, 2 * w, w)
        conv(f"dec{lvl}_conv2", 3, w, w)
        cin = w
    conv("head", 1, cin, 2)
    return shapes


def dumped_levels(cfg):
    """``(name, channels)`` for each block output written by :func:`dump_activations`."""
    levels = [(f"enc{l}", cfg.width(l)) for l in range(1, cfg.depth + 1)]
    levels.append(("mid", cfg.bottleneck))
    levels += [(f"dec{l}", cfg.width(l)) for l in range(cfg.depth, 0, -1)]
    return levels


class UNetModel:
    def __init__(self, config, params, channel_tag=CHANNELS_IJ):
        expected = layer_shapes(config)
        if list(params) != list(expected):
            raise ConfigError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ConfigError(f"{name}: shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params
        self.channel_tag = channel_tag

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype):
        return UNetModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                         self.channel_tag)

    def copy(self):
        return UNetModel(self.config, {k: v.copy() for k, v in self.params.items()},
                         self.channel_tag)

    def forward(self, x, training=False, rng=None, tensors=None, activations=None):
        """Run the network on an ``[H, W, 2]`` input and return the field tensor.

        ``tensors`` maps parameter names to :class:`~warpreg.autodiff.Tensor`
        leaves when gradients are wanted. Block outputs are appended to
        ``activations`` if given.
        """
        cfg = self.config
        if tensors is None:
            tensors = {k: ad.constant(v) for k, v in self.params.items()}
        if training and rng is None:
            raise ValueError("training mode needs a dropout rng")

        def conv(name, t):
            return ad.tanh(ad.conv2d(t, tensors[f"{name}/kernel"], tensors[f"{name}/bias"]))

        def record(name, t):
            if activations is not None:
                activations.append((name, t.value))

        h = x if isinstance(x, ad.Tensor) else ad.constant(x)
        skips = []
        for lvl in range(1, cfg.depth + 1):
            h = conv(f"enc{lvl}_conv2", conv(f"enc{lvl}_conv1", h))
            record(f"enc{lvl}", h)
            skips.append(h)
            h = ad.maxpool2(ad.dropout(h, DROPOUT_RATE, training, rng))
        h = conv("mid_conv2", conv("mid_conv1", h))
        record("mid", h)
        for lvl in range(cfg.depth, 0, -1):
            up = ad.conv2d_transpose(h, tensors[f"dec{lvl}_up/kernel"], tensors[f"dec{lvl}_up/bias"])
            h = ad.concat([up, skips[lvl - 1]])
            h = conv(f"dec{lvl}_conv2", conv(f"dec{lvl}_conv1", h))
            record(f"dec{lvl}", h)
        return ad.linear(ad.conv2d(h, tensors["head/kernel"], tensors["head/bias"]))


def build_unet(cfg, seed=0, dtype=np.float32):
    """Glorot-uniform kernels, zero biases, drawn from the ``init`` stream of ``seed``."""
    rng = rng_stream(seed, "init")
    params = {}
    for name, shape in layer_shapes(cfg).items():
        if name.endswith("/bias"):
            params[name] = np.zeros(shape, dtype)
        else:
            k1, k2, cin, cout = shape
            limit = math.sqrt(6.0 / (k1 * k2 * (cin + cout)))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return UNetModel(cfg, params)


def stack_input(s, t, dtype=np.float32):
    return np.stack([np.asarray(s, dtype), np.asarray(t, dtype)], axis=-1)


def _check_pair(model, s, t):
    n = model.config.input_size
    if s.shape != (n, n) or t.shape != (n, n):
        raise DimensionError(
            f"model expects {n}x{n} images, got subject {s.shape} and template {t.shape}")


def forward_register(model, s, t, training=False, rng=None):
    """Predict the field for ``(s, t)`` and warp ``s`` with it.

    Returns ``(WarpField, warped image)``.
    """
    s = as_image(s)
    t = as_image(t)
    _check_pair(model, s, t)
    dt = model.dtype
    phi = model.forward(stack_input(s, t, dt), training=training, rng=rng)
    warped = ad.dense_warp(ad.constant(s.astype(dt)[..., None]), phi)
    return WarpField.from_array(phi.value), warped.value[..., 0]


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    loss_mode: str = "msessim"
    alpha: float = 10.0
    beta: float = 1.0
    seed: int = 0
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if self.lr <= 0 or self.epochs < 0:
            raise ConfigError("lr must be > 0 and epochs >= 0")
        metrics.LossWeights(self.alpha, self.beta)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_mse: float
    train_ssim: float
    val_mse: float
    val_ssim: float


@dataclass
class StepResult:
    loss: float
    mse: float
    ssim: float
    grads: dict = field(default_factory=dict)


def loss_terms(model, s, t, tc, training=False, rng=None, ssim_params=metrics.DEFAULT_SSIM):
    """Forward pass with gradient tracking; returns the loss tensor and its parts.

    The loss only ever compares the warped subject with the template.
    """
    dt = model.dtype
    tensors = {k: ad.parameter(v) for k, v in model.params.items()}
    phi = model.forward(stack_input(s, t, dt), training=training, rng=rng, tensors=tensors)
    warped = ad.dense_warp(ad.constant(np.asarray(s, dt)[..., None]), phi)
    target = np.asarray(t, np.float64)[..., None]
    mse_t = ad.mse_loss(warped, target)
    ssim_t = ad.ssim_loss_term(warped, target, ssim_params)
    if tc.loss_mode == "msessim":
        loss = tc.alpha * mse_t - tc.beta * (ssim_t - 1.0)
    elif tc.loss_mode == "ssim_only":
        loss = 1.0 - ssim_t
    else:
        loss = mse_t
    return loss, mse_t, ssim_t, tensors


def train_step(model, s, t, tc, rng=None, training=True):
    loss, mse_t, ssim_t, tensors = loss_terms(model, s, t, tc, training=training, rng=rng)
    loss.backward()
    grads = {k: v.grad for k, v in tensors.items() if v.grad is not None}
    return StepResult(loss.item(), mse_t.item(), ssim_t.item(), grads)


def evaluate(model, pairs):
    """Mean ``(mse, ssim)`` of warped-vs-template over pairs, dropout off."""
    if not pairs:
        return float("nan"), float("nan")
    m, s = [], []
    for p in pairs:
        _, w = forward_register(model, p.subject, p.template)
        m.append(metrics.mse(w, p.template))
        s.append(metrics.ssim(w, p.template))
    return float(np.mean(m)), float(np.mean(s))


def train(model, dataset, tc, on_epoch: Callable | None = None, state=None):
    """Adam, batch size 1, shuffled pairs each epoch; updates ``model`` in place.

    ``dataset`` provides ``train_pairs()`` and ``val_pairs()``. ``on_epoch``
    is called as ``on_epoch(record, model)`` after every epoch. Returns
    ``(model, history)``.
    """
    train_pairs = dataset.train_pairs()
    val_pairs = dataset.val_pairs()
    if not train_pairs:
        raise ConfigError("training set is empty")
    for p in train_pairs + val_pairs:
        _check_pair(model, p.subject, p.template)
    state = state or ad.AdamState(lr=tc.lr)
    data_rng = rng_stream(tc.seed, "data")
    drop_rng = rng_stream(tc.seed, "dropout")
    history = []
    for epoch in range(1, tc.epochs + 1):
        order = data_rng.permutation(len(train_pairs))
        losses, mses, ssims = [], [], []
        for idx in order:
            p = train_pairs[idx]
            step = train_step(model, p.subject, p.template, tc, rng=drop_rng)
            ad.adam_step(model.params, step.grads, state)
            losses.append(step.loss)
            mses.append(step.mse)
            ssims.append(step.ssim)
        val_mse, val_ssim = evaluate(model, val_pairs)
        rec = EpochRecord(epoch, float(np.mean(losses)), float(np.mean(mses)),
                          float(np.mean(ssims)), val_mse, val_ssim)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec, model)
    return model, history


# --------------------------------------------------------------- checkpoints

def save_model(model, path):
    cfg = model.config
    with atomic_write(path) as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIBI", VERSION, cfg.input_size, cfg.depth, cfg.base_width,
                             model.channel_tag, len(model.params)))
        for name, arr in model.params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


_HEADER = struct.Struct("<IIIIBI")


def _parse_header(buf):
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 4 + _HEADER.size:
        raise FormatError("checkpoint truncated inside header")
    version, size, depth, width, tag, count = _HEADER.unpack_from(buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    return UNetConfig(size, depth, width), tag, count, 4 + _HEADER.size


def read_header(path):
    """``(UNetConfig, channel tag, layer count)`` without reading the weights."""
    with open(path, "rb") as fh:
        buf = fh.read(4 + _HEADER.size)
    cfg, tag, count, _ = _parse_header(buf)
    return cfg, tag, count


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    cfg, tag, count, pos = _parse_header(buf)
    params = {}

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"checkpoint truncated at byte {len(buf)}, needed {pos + n}")
        out = buf[pos:pos + n]
        pos += n
        return out

    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last layer")
    return UNetModel(cfg, params, tag)


# ------------------------------------------------------------------- probing

def dump_activations(model, s, t, out_dir):
    """Write each block output channel as ``level_{n}_chan_{c}.pgm`` in ``out_dir``.

    Levels follow the data path: encoder blocks, bottleneck, decoder blocks;
    the last level is the feature block feeding the output head. Returns the
    list of written paths.
    """
    s = as_image(s)
    t = as_image(t)
    _check_pair(model, s, t)
    os.makedirs(out_dir, exist_ok=True)
    acts = []
    model.forward(stack_input(s, t, model.dtype), training=False, activations=acts)
    paths = []
    for n, (_, value) in enumerate(acts):
        for c in range(value.shape[-1]):
            chan = value[..., c].astype(np.float64)
            lo, hi = chan.min(), chan.max()
            tile = (chan - lo) / (hi - lo) if hi > lo else np.zeros_like(chan)
            path = os.path.join(out_dir, f"level_{n}_chan_{c}.pgm")
            save_pgm(tile, path)
            paths.append(path)
    return paths
