"""Desk-scale experiments: inference timing, demons sweep, loss ablation, progression.

Timed regions cover only the registration call itself: no file I/O, model
loading or metric evaluation. Timed work runs with BLAS pools capped at one
thread.
"""

import csv
import io
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics, unet
from ._io import atomic_write
from .demons import DemonsConfig, build_pyramid, register_demons
from .errors import ConfigError, DimensionError
from .image import save_pgm, write_overlay

CSV_FIELDS = ("method", "params", "pair_id", "wall_time_ms",
              "ssim_before", "ssim_after", "mse_before", "mse_after")
HISTORY_FIELDS = ("epoch", "train_loss", "train_mse", "train_ssim", "val_mse", "val_ssim")


@dataclass(frozen=True)
class BenchRecord:
    method: str
    params: str
    pair_id: str
    wall_time_ms: float
    ssim_before: float
    ssim_after: float
    mse_before: float
    mse_after: float

    def __post_init__(self):
        if not self.wall_time_ms > 0:
            raise ValueError(f"wall time must be positive, got {self.wall_time_ms}")
        for name in CSV_FIELDS[4:]:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")

    def row(self):
        return [self.method, self.params, self.pair_id, f"{self.wall_time_ms:.4f}",
                *(f"{getattr(self, k):.8f}" for k in CSV_FIELDS[4:])]


def _format_params(**kw):
    return " ".join(f"{k}={v}" for k, v in kw.items())


def _before(pair):
    return metrics.ssim(pair.subject, pair.template), metrics.mse(pair.subject, pair.template)


def _after(w, pair):
    return metrics.ssim(w, pair.template), metrics.mse(w, pair.template)


def _timed(fn):
    t0 = time.perf_counter_ns()
    out = fn()
    return out, (time.perf_counter_ns() - t0) / 1e6


# ---------------------------------------------------------------- inference

def bench_inference(model, pairs, repeats=100):
    """Time :func:`unet.forward_register` ``repeats`` times per pair."""
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if not pairs:
        return []
    n = model.config.input_size
    for p in pairs:
        if p.subject.shape != (n, n) or p.template.shape != (n, n):
            raise DimensionError(f"pair {p.pair_id}: expected {n}x{n} images, got {p.subject.shape}")
    params = _format_params(size=n, depth=model.config.depth, width=model.config.base_width)
    records = []
    with threadpool_limits(1):
        unet.forward_register(model, pairs[0].subject, pairs[0].template)  # warm-up
        for p in pairs:
            sb, mb = _before(p)
            for _ in range(repeats):
                (_, w), ms = _timed(lambda: unet.forward_register(model, p.subject, p.template))
                sa, ma = _after(w, p)
                records.append(BenchRecord("unet", params, p.pair_id, ms, sb, sa, mb, ma))
    return records


# ------------------------------------------------------------------- demons

def _check_grid(pairs, iterations, levels):
    if not iterations or not levels:
        raise ConfigError("demons grid needs at least one iteration count and one level count")
    for v in list(iterations) + list(levels):
        if int(v) != v or v < 1:
            raise ConfigError(f"grid values must be positive integers, got {v!r}")
    for p in pairs:
        build_pyramid(p.subject, max(levels))


def bench_demons_sweep(pairs, iterations=(10, 20, 40, 80), levels=(1, 2, 3), base=DemonsConfig()):
    """Run demons at every ``(iterations, levels)`` grid point on every pair."""
    _check_grid(pairs, iterations, levels)
    records = []
    if not pairs:
        return records
    with threadpool_limits(1):
        register_demons(pairs[0].subject, pairs[0].template,
                        replace(base, levels=1, iterations_per_level=1), trace=False)
        for lv in levels:
            for it in iterations:
                cfg = replace(base, levels=int(lv), iterations_per_level=int(it))
                params = _format_params(iters=int(it), levels=int(lv))
                for p in pairs:
                    sb, mb = _before(p)
                    (_, w, _), ms = _timed(lambda: register_demons(p.subject, p.template, cfg,
                                                                   trace=False))
                    sa, ma = _after(w, p)
                    records.append(BenchRecord("demons", params, p.pair_id, ms, sb, sa, mb, ma))
    return records


# ---------------------------------------------------------------- summaries

def group(records):
    """``{(method, params): [records]}`` preserving first-seen order."""
    out = {}
    for r in records:
        out.setdefault((r.method, r.params), []).append(r)
    return out


def best_by_ssim(records):
    """``(method, params)`` key with the highest mean ``ssim_after``."""
    groups = group(records)
    if not groups:
        raise ConfigError("no records to rank")
    return max(groups, key=lambda k: np.mean([r.ssim_after for r in groups[k]]))


def mean_time(records, key=None):
    rows = records if key is None else group(records)[key]
    return float(np.mean([r.wall_time_ms for r in rows]))


def speed_ratio(inference_records, demons_records):
    """Mean demons time at its best-SSIM grid point over mean learned inference time."""
    key = best_by_ssim(demons_records)
    return mean_time(demons_records, key) / mean_time(inference_records)


def write_csv(records, path):
    with atomic_write(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow(r.row())


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [BenchRecord(r["method"], r["params"], r["pair_id"],
                        *(float(r[k]) for k in CSV_FIELDS[3:])) for r in rows]


def summary(records):
    """ASCII table: one line per (method, params) with mean and standard deviation."""
    buf = io.StringIO()
    buf.write(f"{'method':<8} {'params':<24} {'n':>5} {'time_ms':>18} {'ssim_after':>18} "
              f"{'mse_after':>20}\n")
    for (method, params), rows in group(records).items():
        t = np.array([r.wall_time_ms for r in rows])
        s = np.array([r.ssim_after for r in rows])
        m = np.array([r.mse_after for r in rows])
        buf.write(f"{method:<8} {params:<24} {len(rows):>5} {t.mean():>9.3f} +- {t.std():<6.3f}"
                  f"{s.mean():>9.4f} +- {s.std():<6.4f} {m.mean():>10.5f} +- {m.std():<7.5f}\n")
    return buf.getvalue()


# ----------------------------------------------------------------- training

def write_history(history, path):
    with atomic_write(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for rec in history:
            w.writerow([rec.epoch] + [f"{getattr(rec, k):.8f}" for k in HISTORY_FIELDS[1:]])


def run_loss_ablation(dataset, base, out_dir, model_config=unet.PRESETS["desk"], on_epoch=None):
    """Train one model per loss mode from the same initialization and data order.

    Writes ``history_<mode>.csv`` per mode and returns ``{mode: (model, history)}``.
    ``on_epoch(mode, record, model)`` is forwarded from training if given.
    """
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    for mode in unet.LOSS_MODES:
        tc = replace(base, loss_mode=mode)
        model = unet.build_unet(model_config, tc.seed)
        cb = None if on_epoch is None else (lambda rec, m, mode=mode: on_epoch(mode, rec, m))
        model, history = unet.train(model, dataset, tc, on_epoch=cb)
        write_history(history, os.path.join(out_dir, f"history_{mode}.csv"))
        results[mode] = (model, history)
    return results


def snapshot_progression(checkpoints, pairs, out_dir):
    """Evaluate each checkpoint on ``pairs``; write W and an overlay for the first pair.

    ``checkpoints`` is a list of ``(label, path)``. Returns one dict per
    checkpoint with mean ``ssim`` and ``mse`` over the pairs.
    """
    for _, path in checkpoints:
        if not os.path.isfile(path):
            raise ConfigError(f"missing checkpoint {path}")
    if not pairs:
        raise ConfigError("no pairs to evaluate")
    os.makedirs(out_dir, exist_ok=True)
    out = []
    for label, path in checkpoints:
        model = unet.load_model(path)
        mse, ssim = unet.evaluate(model, pairs)
        _, w = unet.forward_register(model, pairs[0].subject, pairs[0].template)
        w_path = os.path.join(out_dir, f"{label}_warped.pgm")
        o_path = os.path.join(out_dir, f"{label}_overlay.ppm")
        save_pgm(w, w_path)
        write_overlay(w, pairs[0].template, o_path)
        out.append({"label": label, "ssim": ssim, "mse": mse, "warped": w_path, "overlay": o_path})
    return out
