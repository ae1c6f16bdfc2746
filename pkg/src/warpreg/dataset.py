"""Synthetic training pairs: brain-like phantoms under random smooth warps.

Every pair is a pure function of ``(n_images, warps_per_image, size, seed)``.
Train/validation assignment is made per base image, so no warped copy of a
validation image is ever seen in training.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .demons import gaussian_kernel1d, gaussian_smooth
from .errors import ConfigError, FormatError, SpecError
from .image import DTYPE, load_pgm, normalize, save_pgm
from ._io import atomic_write
from .warpfield import WarpField, apply, invert, load_field, max_gradient, save_field

WARP_KINDS = ("linear", "spherical", "sinusoidal", "mixed")
GRADIENT_BOUND = 0.5      # fields must stay strictly below this
GRADIENT_TARGET = 0.45    # sampled fields aim here, leaving a margin
BASE_AMPLITUDE = 5.0      # px at 64x64
VAL_FRACTION = 0.2
AMPLITUDE_RANGE = (0.6, 1.0)  # fraction of the cap drawn per pair
TEXTURE_LEVEL = 0.06
PHANTOM_BLUR = 0.6           # px at 64x64


def max_amplitude(size):
    return BASE_AMPLITUDE * size / 64.0


def _seed_for(*key):
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


# ------------------------------------------------------------------ phantoms

def _ellipse(ii, jj, ci, cj, ri, rj, theta):
    c, s = math.cos(theta), math.sin(theta)
    u = (ii - ci) * c + (jj - cj) * s
    v = -(ii - ci) * s + (jj - cj) * c
    return (u / ri) ** 2 + (v / rj) ** 2 <= 1.0


def gen_phantom(size, seed):
    """Axial-slice-like phantom: skull ring, brain, ventricles, lesions, texture."""
    if size < 16:
        raise ConfigError(f"phantom size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    n = float(size)
    ii, jj = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    img = np.zeros((size, size))
    c0 = n / 2 + rng.uniform(-0.03, 0.03, 2) * n
    ri, rj = rng.uniform(0.40, 0.46) * n, rng.uniform(0.32, 0.40) * n
    rot = rng.uniform(-0.3, 0.3)
    skull = rng.uniform(0.85, 1.0)
    img[_ellipse(ii, jj, *c0, ri, rj, rot)] = skull
    t = rng.uniform(0.05, 0.08) * n
    brain = _ellipse(ii, jj, *c0, ri - t, rj - t, rot)
    img[brain] = rng.uniform(0.4, 0.55)
    # grey/white contrast band
    img[_ellipse(ii, jj, *c0, ri - 1.7 * t, rj - 1.7 * t, rot)] = rng.uniform(0.6, 0.75)
    for side in (-1, 1):
        off = side * rng.uniform(0.04, 0.07) * n
        img[_ellipse(ii, jj, c0[0] + rng.uniform(-0.03, 0.03) * n, c0[1] + off,
                     rng.uniform(0.10, 0.16) * n, rng.uniform(0.03, 0.05) * n,
                     rot + side * rng.uniform(0.1, 0.4))] = rng.uniform(0.05, 0.2)
    for _ in range(rng.integers(4, 9)):
        ang = rng.uniform(0, 2 * math.pi)
        rad = rng.uniform(0.05, 0.25) * n
        img[_ellipse(ii, jj, c0[0] + rad * math.sin(ang), c0[1] + rad * math.cos(ang),
                     rng.uniform(0.02, 0.07) * n, rng.uniform(0.02, 0.07) * n,
                     rng.uniform(0, math.pi))] = rng.uniform(0.15, 0.95)
    texture = gaussian_smooth(rng.normal(size=(size, size)), 1.0 * n / 64)
    texture /= texture.std() + 1e-12
    img = img + TEXTURE_LEVEL * texture * brain
    img = gaussian_smooth(img, PHANTOM_BLUR * n / 64)
    return normalize(img)


def resize(img, size):
    """Bilinear resample onto a ``size x size`` grid (pixel-centre aligned)."""
    h, w = img.shape
    ci = (np.arange(size) + 0.5) * h / size - 0.5
    cj = (np.arange(size) + 0.5) * w / size - 0.5
    ii, jj = np.meshgrid(ci, cj, indexing="ij")
    if h > size or w > size:
        img = gaussian_smooth(np.asarray(img, np.float64), 0.5 * max(h, w) / size)
    return kernels.warp_bilinear(np.asarray(img, np.float64), ii, jj).astype(DTYPE)


# -------------------------------------------------------------------- fields

@dataclass
class WarpSpec:
    kind: str
    amplitude: float
    params: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in WARP_KINDS:
            raise SpecError(f"unknown warp kind {self.kind!r}; expected one of {WARP_KINDS}")
        if self.amplitude < 0:
            raise SpecError("amplitude must be >= 0")


def _coords(size):
    ii, jj = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64),
                         indexing="ij")
    return ii, jj


def sample_params(kind, amplitude, size, rng):
    """Random parameters for ``kind`` that respect amplitude and gradient bounds."""
    if kind == "linear":
        m = rng.uniform(-1, 1, (2, 2))
        off = rng.uniform(-1, 1, 2)
        # corner reach of M(p - c) plus the offset
        reach = np.abs(m).sum(axis=1).max() * (size - 1) / 2 + np.abs(off).max()
        norm = np.linalg.norm(m, 2)
        k = min(amplitude / math.sqrt(2) / max(reach, 1e-12), GRADIENT_TARGET / max(norm, 1e-12))
        return {"offset": (off * k).tolist(), "matrix": (m * k).tolist()}
    if kind == "spherical":
        radius = rng.uniform(0.25, 0.5) * size
        center = (size / 2 + rng.uniform(-0.2, 0.2, 2) * size).tolist()
        strength = min(amplitude, GRADIENT_TARGET * radius / math.pi) * rng.choice([-1.0, 1.0])
        return {"center": center, "radius": radius, "strength": strength}
    if kind == "sinusoidal":
        f = rng.integers(1, 3, 2)
        amp = min(amplitude / math.sqrt(2), GRADIENT_TARGET * size / (2 * math.pi * int(f.max())))
        return {"freq_i": int(f[0]), "freq_j": int(f[1]),
                "phase": rng.uniform(0, 2 * math.pi, 2).tolist(), "amplitude": amp}
    parts = [sample_params(k, amplitude, size, rng) for k in ("linear", "spherical", "sinusoidal")]
    return {"parts": parts}


def _raw_field(kind, params, size):
    ii, jj = _coords(size)
    if kind == "linear":
        m = np.asarray(params["matrix"], np.float64)
        off = np.asarray(params["offset"], np.float64)
        c = (size - 1) / 2
        pi, pj = ii - c, jj - c
        return off[0] + m[0, 0] * pi + m[0, 1] * pj, off[1] + m[1, 0] * pi + m[1, 1] * pj
    if kind == "spherical":
        ci, cj = params["center"]
        r = params["radius"]
        di, dj = ii - ci, jj - cj
        d = np.sqrt(di * di + dj * dj)
        mag = np.where(d < r, params["strength"] * np.sin(np.pi * d / r), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(d > 0, mag / d, 0.0)
        return unit * di, unit * dj
    if kind == "sinusoidal":
        a = params["amplitude"]
        fi, fj = params["freq_i"], params["freq_j"]
        ph = params["phase"]
        # each component varies along its own axis only
        arg_i = 2 * np.pi * fi * ii / size + ph[0]
        arg_j = 2 * np.pi * fj * jj / size + ph[1]
        return a * np.sin(arg_i), a * np.sin(arg_j)
    raise SpecError(f"no direct generator for kind {kind!r}")


def gen_field(spec, size):
    """Displacement field described by ``spec`` on a ``size x size`` grid.

    Raises :class:`SpecError` when the field would exceed the amplitude cap
    or the invertibility bound ``max |grad phi| < 0.5``.
    """
    if spec.amplitude > max_amplitude(size) + 1e-9:
        raise SpecError(f"amplitude {spec.amplitude} exceeds cap {max_amplitude(size)} at size {size}")
    if spec.amplitude == 0:
        return WarpField.zeros(size, size)
    params = spec.params
    if params is None:
        params = sample_params(spec.kind, spec.amplitude, size, np.random.default_rng(spec.seed))
    if spec.kind == "mixed":
        fi = np.zeros((size, size))
        fj = np.zeros((size, size))
        for kind, p in zip(("linear", "spherical", "sinusoidal"), params["parts"]):
            a, b = _raw_field(kind, p, size)
            fi += a
            fj += b
        f = WarpField(fi, fj)
        k = min(spec.amplitude / max(f.max_displacement(), 1e-12),
                GRADIENT_TARGET / max(max_gradient(f), 1e-12))
        fi, fj = fi * k, fj * k
    else:
        fi, fj = _raw_field(spec.kind, params, size)
    field_ = WarpField(fi.astype(DTYPE), fj.astype(DTYPE))
    g = max_gradient(field_)
    if g >= GRADIENT_BOUND:
        raise SpecError(f"field gradient {g:.3f} violates invertibility bound {GRADIENT_BOUND}")
    if field_.max_displacement() > spec.amplitude * (1 + 1e-4) + 1e-6:
        raise SpecError(
            f"field reaches {field_.max_displacement():.3f} px, above amplitude {spec.amplitude}")
    return field_


def roundtrip_error(field_, img, margin=None):
    """Mean absolute interior error of warping ``img`` by ``field_`` then its inverse."""
    back = apply(invert(field_), apply(field_, img))
    m = margin if margin is not None else int(math.ceil(max_amplitude(img.shape[0]))) + 1
    return float(np.abs(back.astype(np.float64) - img)[m:-m, m:-m].mean())


# --------------------------------------------------------------------- pairs

@dataclass
class SamplePair:
    pair_id: str
    base_id: int
    split: str
    subject: np.ndarray
    template: np.ndarray
    applied_field: WarpField
    roundtrip_truth: np.ndarray


@dataclass
class Dataset:
    pairs: list = field(default_factory=list)

    def train_pairs(self):
        return [p for p in self.pairs if p.split == "train"]

    def val_pairs(self):
        return [p for p in self.pairs if p.split == "val"]

    def __len__(self):
        return len(self.pairs)


def split_bases(n_images, seed, val_fraction=VAL_FRACTION):
    """Set of base-image ids assigned to validation."""
    if n_images < 2:
        raise ConfigError("need at least 2 base images to form both splits")
    n_val = min(max(1, int(round(val_fraction * n_images))), n_images - 1)
    perm = np.random.default_rng(_seed_for(seed, 0x5E)).permutation(n_images)
    return set(int(b) for b in perm[:n_val])


def make_pair(template, base_id, k, size, seed, split):
    rng = np.random.default_rng(_seed_for(seed, base_id, k, 0xF1))
    kind = WARP_KINDS[int(rng.integers(len(WARP_KINDS)))]
    amp = max_amplitude(size) * rng.uniform(*AMPLITUDE_RANGE)
    spec = WarpSpec(kind, amp, seed=int(rng.integers(2 ** 31)))
    f = gen_field(spec, size)
    subject = apply(f, template)
    truth = apply(invert(f), subject)
    return SamplePair(f"b{base_id:04d}_w{k}", base_id, split, subject, template, f, truth)


def generate(n_images, warps_per_image, size, seed, base_images=None,
             val_fraction=VAL_FRACTION):
    """Build the in-memory dataset. ``base_images`` replaces the phantoms if given."""
    if warps_per_image < 1:
        raise ConfigError("warps_per_image must be >= 1")
    if base_images is not None:
        n_images = len(base_images)
    val = split_bases(n_images, seed, val_fraction)
    pairs = []
    for b in range(n_images):
        if base_images is None:
            template = gen_phantom(size, _seed_for(seed, b, 0xA7))
        else:
            template = normalize(resize(base_images[b], size))
        split = "val" if b in val else "train"
        for k in range(warps_per_image):
            pairs.append(make_pair(template, b, k, size, seed, split))
    return Dataset(pairs)


def read_image_dir(path):
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".pgm"))
    if not names:
        raise ConfigError(f"no .pgm files in {path}")
    return [load_pgm(os.path.join(path, n)) for n in names]


def make_dataset(n_images, warps_per_image, size, seed, out_dir, base_images=None):
    """Generate pairs and write them under ``out_dir``; returns the manifest path.

    Layout: ``templates/b####.pgm``, ``pairs/<id>_subject.pgm``,
    ``pairs/<id>_field.wrp1``, ``pairs/<id>_truth.pgm`` and ``manifest.txt``
    with one ``pair_id split subject template field truth`` line per pair.
    """
    ds = generate(n_images, warps_per_image, size, seed, base_images)
    os.makedirs(os.path.join(out_dir, "templates"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "pairs"), exist_ok=True)
    lines = []
    written = set()
    for p in ds.pairs:
        tpl = f"templates/b{p.base_id:04d}.pgm"
        if tpl not in written:
            save_pgm(p.template, os.path.join(out_dir, tpl))
            written.add(tpl)
        sub = f"pairs/{p.pair_id}_subject.pgm"
        fld = f"pairs/{p.pair_id}_field.wrp1"
        tru = f"pairs/{p.pair_id}_truth.pgm"
        save_pgm(p.subject, os.path.join(out_dir, sub))
        save_field(p.applied_field, os.path.join(out_dir, fld))
        save_pgm(p.roundtrip_truth, os.path.join(out_dir, tru))
        lines.append(f"{p.pair_id} {p.split} {sub} {tpl} {fld} {tru}\n")
    manifest = os.path.join(out_dir, "manifest.txt")
    with atomic_write(manifest, "w") as fh:
        fh.writelines(lines)
    return manifest


def load_dataset(manifest):
    """Read a manifest written by :func:`make_dataset`."""
    root = os.path.dirname(os.path.abspath(manifest))
    pairs = []
    cache = {}
    with open(manifest) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6 or parts[1] not in ("train", "val"):
                raise FormatError(f"{manifest}:{lineno}: malformed manifest line")
            pid, split, sub, tpl, fld, tru = parts
            if tpl not in cache:
                cache[tpl] = load_pgm(os.path.join(root, tpl))
            base = int(pid[1:pid.index("_")]) if pid.startswith("b") and "_" in pid else lineno
            pairs.append(SamplePair(pid, base, split, load_pgm(os.path.join(root, sub)),
                                    cache[tpl], load_field(os.path.join(root, fld)),
                                    load_pgm(os.path.join(root, tru))))
    return Dataset(pairs)
