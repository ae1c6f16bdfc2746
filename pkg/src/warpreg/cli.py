"""Command-line entry point: ``warpreg <command> [<subcommand>] [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 when the work itself
fails. Every run parameter is a flag; ``--config FILE`` supplies defaults
from ``key = value`` lines, and flags given on the command line win.
"""

import argparse
import csv
import difflib
import os
import sys
from contextlib import nullcontext

from threadpoolctl import threadpool_limits

from . import bench, dataset, metrics, rigid, unet
from ._io import atomic_write
from .demons import DemonsConfig, register_demons
from .errors import WarpregError
from .image import load_pgm, save_pgm, write_overlay
from .warpfield import apply, invert, load_field, save_field

PRESET_TRAINING = {
    "paper": {"epochs": 100, "lr": 1e-4},
    "desk": {"epochs": 30, "lr": 1e-4},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*a, **kw)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}{_suggest(self, message)}")


def _suggest(parser, message):
    """A 'did you mean' hint for unknown flags and subcommands."""
    words = []
    if message.startswith("unrecognized arguments:"):
        known = sorted(_all_options(parser))
        for tok in message.split(":", 1)[1].split():
            words += difflib.get_close_matches(tok.split("=")[0], known, n=1)
    elif "invalid choice:" in message:
        bad = message.split("invalid choice:", 1)[1].split("'")[1]
        for a in parser._actions:
            if isinstance(a, argparse._SubParsersAction):
                words += difflib.get_close_matches(bad, list(a.choices), n=1)
    return f" (did you mean {', '.join(words)}?)" if words else ""


def _all_options(parser):
    """Option strings of ``parser`` and every parser nested below it."""
    found = set()
    for a in parser._actions:
        found.update(a.option_strings)
        if isinstance(a, argparse._SubParsersAction):
            for child in a.choices.values():
                found |= _all_options(child)
    return found


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


# ---------------------------------------------------------------- commands

def cmd_make_dataset(a):
    bases = dataset.read_image_dir(a.base_dir) if a.base_dir else None
    manifest = dataset.make_dataset(a.images, a.warps, a.size, a.seed, a.out, base_images=bases)
    print(manifest)


def cmd_warp_apply(a):
    save_pgm(apply(load_field(a.field), load_pgm(a.image)), a.out)


def cmd_warp_random(a):
    spec = dataset.WarpSpec(a.kind, a.amplitude, seed=a.seed)
    f = dataset.gen_field(spec, a.size)
    save_field(f, a.out_field)
    if a.image:
        if not a.out_image:
            raise UsageError("--image needs --out-image")
        save_pgm(apply(f, load_pgm(a.image)), a.out_image)
    print(f"{f.max_displacement():.6f}")


def cmd_warp_invert(a):
    save_field(invert(load_field(a.field), a.iterations), a.out)


def cmd_register_phase(a):
    s = rigid.phase_correlate(load_pgm(a.subject), load_pgm(a.template), window=a.window)
    print(f"{s.di} {s.dj} {s.peak_response:.6f}")


def cmd_register_demons(a):
    cfg = DemonsConfig(levels=a.levels, iterations_per_level=a.iterations,
                       smoothing_sigma=a.smoothing_sigma, update_sigma=a.update_sigma,
                       max_step=a.max_step)
    s, t = load_pgm(a.subject), load_pgm(a.template)
    field, w, rows = register_demons(s, t, cfg, trace=bool(a.trace))
    if a.out_warped:
        save_pgm(w, a.out_warped)
    if a.out_field:
        save_field(field, a.out_field)
    if a.trace:
        with atomic_write(a.trace, "w") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["iteration", "level", "mse", "ssim"])
            wr.writerows([r.iteration, r.level, f"{r.mse:.8f}", f"{r.ssim:.8f}"] for r in rows)
    _print_metrics(s, w, t)


def _print_metrics(s, w, t):
    print(f"ssim {metrics.ssim(s, t):.6f} -> {metrics.ssim(w, t):.6f}")
    print(f"mse {metrics.mse(s, t):.6f} -> {metrics.mse(w, t):.6f}")


def _load_pairs(a, size):
    if a.manifest:
        return dataset.load_dataset(a.manifest)
    if a.images:
        return dataset.generate(a.images, a.warps, size, a.seed)
    raise UsageError("give --manifest or --images")


def _train_config(a):
    bundle = PRESET_TRAINING[a.preset]
    return unet.TrainConfig(lr=a.lr if a.lr is not None else bundle["lr"],
                            epochs=a.epochs if a.epochs is not None else bundle["epochs"],
                            loss_mode=a.loss, seed=a.seed)


def cmd_train(a):
    cfg = unet.PRESETS[a.preset]
    tc = _train_config(a)
    ds = _load_pairs(a, cfg.input_size)
    keep = set(a.checkpoint_epochs or [])
    if keep and not a.checkpoint_dir:
        raise UsageError("--checkpoint-epochs needs --checkpoint-dir")
    if a.checkpoint_dir:
        os.makedirs(a.checkpoint_dir, exist_ok=True)

    def on_epoch(rec, model):
        print(f"epoch {rec.epoch} loss {rec.train_loss:.6f} train_ssim {rec.train_ssim:.4f} "
              f"val_mse {rec.val_mse:.6f} val_ssim {rec.val_ssim:.4f}", flush=True)
        if rec.epoch in keep:
            unet.save_model(model, os.path.join(a.checkpoint_dir, f"epoch_{rec.epoch:03d}.unt1"))

    model, history = unet.train(unet.build_unet(cfg, tc.seed), ds, tc, on_epoch=on_epoch)
    unet.save_model(model, a.out)
    if a.history:
        bench.write_history(history, a.history)


def cmd_infer(a):
    model = unet.load_model(a.model)
    s, t = load_pgm(a.subject), load_pgm(a.template)
    field, w = unet.forward_register(model, s, t)
    if a.out_warped:
        save_pgm(w, a.out_warped)
    if a.out_field:
        save_field(field, a.out_field)
    if a.overlay:
        write_overlay(w, t, a.overlay)
    _print_metrics(s, w, t)


def cmd_inspect(a):
    model = unet.load_model(a.model)
    paths = unet.dump_activations(model, load_pgm(a.subject), load_pgm(a.template), a.out_dir)
    for name, chans in unet.dumped_levels(model.config):
        print(f"{name} {chans}")
    print(f"wrote {len(paths)} files")


def _report(records, a):
    if a.csv:
        bench.write_csv(records, a.csv)
    print(bench.summary(records), end="")


def _pick_pairs(ds, a):
    pairs = ds.val_pairs() if a.split == "val" else ds.train_pairs() if a.split == "train" else ds.pairs
    return pairs[:a.limit] if a.limit else pairs


def cmd_bench_inference(a):
    model = unet.load_model(a.model)
    pairs = _pick_pairs(_load_pairs(a, model.config.input_size), a)
    _report(bench.bench_inference(model, pairs, a.repeats), a)


def cmd_bench_demons(a):
    pairs = _pick_pairs(_load_pairs(a, a.size), a)
    recs = bench.bench_demons_sweep(pairs, a.iterations, a.levels)
    _report(recs, a)
    print(f"best {bench.best_by_ssim(recs)[1]}")


def cmd_bench_ablation(a):
    cfg = unet.PRESETS[a.preset]
    ds = _load_pairs(a, cfg.input_size)

    def on_epoch(mode, rec, model):
        print(f"{mode} epoch {rec.epoch} val_mse {rec.val_mse:.6f} val_ssim {rec.val_ssim:.4f}",
              flush=True)

    res = bench.run_loss_ablation(ds, _train_config(a), a.out_dir, cfg, on_epoch)
    for mode, (_, hist) in res.items():
        print(f"final {mode} val_mse {hist[-1].val_mse:.6f} val_ssim {hist[-1].val_ssim:.4f}")


def cmd_bench_progression(a):
    ckpts = []
    for item in a.checkpoints:
        label, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"checkpoint must be label=path, got {item!r}")
        ckpts.append((label, path))
    size = unet.read_header(ckpts[0][1])[0].input_size if os.path.isfile(ckpts[0][1]) else a.size
    pairs = _pick_pairs(_load_pairs(a, size), a)
    for snap in bench.snapshot_progression(ckpts, pairs, a.out_dir):
        print(f"{snap['label']} ssim {snap['ssim']:.6f} mse {snap['mse']:.6f}")


# ------------------------------------------------------------------ parser

REQUIRED = {
    cmd_make_dataset: ("out",),
    cmd_warp_apply: ("image", "field", "out"),
    cmd_warp_random: ("kind", "amplitude", "out_field"),
    cmd_warp_invert: ("field", "out"),
    cmd_register_phase: ("subject", "template"),
    cmd_register_demons: ("subject", "template"),
    cmd_train: ("out",),
    cmd_infer: ("model", "subject", "template"),
    cmd_inspect: ("model", "subject", "template", "out_dir"),
    cmd_bench_inference: ("model",),
    cmd_bench_ablation: ("out_dir",),
    cmd_bench_progression: ("checkpoints", "out_dir"),
}


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="cap on BLAS/OpenMP threads (timed benches always use 1)")
    p.add_argument("--config", default=None, help="key = value file; flags win")


def _data_flags(p, size=True):
    p.add_argument("--manifest", default=None)
    p.add_argument("--images", type=_positive_int, default=None,
                   help="generate this many phantoms in memory instead of reading a manifest")
    p.add_argument("--warps", type=_positive_int, default=5)
    if size:
        p.add_argument("--size", type=_positive_int, default=64)


def _selection_flags(p):
    p.add_argument("--split", choices=("val", "train", "all"), default="val")
    p.add_argument("--limit", type=_positive_int, default=None)


def _train_flags(p):
    p.add_argument("--preset", choices=sorted(unet.PRESETS), default="desk")
    p.add_argument("--epochs", type=_positive_int, default=None)
    p.add_argument("--lr", type=_positive_float, default=None)
    p.add_argument("--loss", choices=unet.LOSS_MODES, default="msessim")


def build_parser():
    root = _Parser(prog="warpreg", description="Deformable image registration toolkit.")
    sub = root.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def leaf(parent, name, fn, help_):
        p = parent.add_parser(name, help=help_, description=help_)
        _common(p)
        p.set_defaults(func=fn)
        return p

    p = leaf(sub, "make-dataset", cmd_make_dataset, "generate phantom pairs and a manifest")
    p.add_argument("--out")
    p.add_argument("--images", type=_positive_int, default=40)
    p.add_argument("--warps", type=_positive_int, default=5)
    p.add_argument("--size", type=_positive_int, default=64)
    p.add_argument("--base-dir", default=None, help="directory of PGM base images")

    warp = sub.add_parser("warp", help="field utilities").add_subparsers(
        dest="sub", metavar="subcommand", parser_class=_Parser)
    p = leaf(warp, "apply", cmd_warp_apply, "warp an image by a field")
    p.add_argument("--image")
    p.add_argument("--field")
    p.add_argument("--out")
    p = leaf(warp, "random", cmd_warp_random, "sample a random invertible field")
    p.add_argument("--kind", choices=dataset.WARP_KINDS)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--size", type=_positive_int, default=64)
    p.add_argument("--out-field")
    p.add_argument("--image", default=None)
    p.add_argument("--out-image", default=None)
    p = leaf(warp, "invert", cmd_warp_invert, "invert a field by fixed-point iteration")
    p.add_argument("--field")
    p.add_argument("--out")
    p.add_argument("--iterations", type=_positive_int, default=20)

    reg = sub.add_parser("register", help="classical registration").add_subparsers(
        dest="sub", metavar="subcommand", parser_class=_Parser)
    p = leaf(reg, "phase", cmd_register_phase, "integer translation by phase correlation")
    p.add_argument("--subject")
    p.add_argument("--template")
    p.add_argument("--window", action="store_true")
    p = leaf(reg, "demons", cmd_register_demons, "diffeomorphic demons")
    p.add_argument("--subject")
    p.add_argument("--template")
    p.add_argument("--levels", type=_positive_int, default=3)
    p.add_argument("--iterations", type=_positive_int, default=30)
    p.add_argument("--smoothing-sigma", type=float, default=1.0)
    p.add_argument("--update-sigma", type=float, default=1.0)
    p.add_argument("--max-step", type=_positive_float, default=2.0)
    p.add_argument("--out-warped", default=None)
    p.add_argument("--out-field", default=None)
    p.add_argument("--trace", default=None, help="CSV of per-iteration metrics")

    p = leaf(sub, "train", cmd_train, "train the registration network")
    _data_flags(p, size=False)
    _train_flags(p)
    p.add_argument("--out")
    p.add_argument("--history", default=None)
    p.add_argument("--checkpoint-epochs", type=_int_list, default=None)
    p.add_argument("--checkpoint-dir", default=None)

    p = leaf(sub, "infer", cmd_infer, "register one pair with a trained model")
    p.add_argument("--model")
    p.add_argument("--subject")
    p.add_argument("--template")
    p.add_argument("--out-warped", default=None)
    p.add_argument("--out-field", default=None)
    p.add_argument("--overlay", default=None)

    p = leaf(sub, "inspect", cmd_inspect, "dump every block activation channel as PGM")
    p.add_argument("--model")
    p.add_argument("--subject")
    p.add_argument("--template")
    p.add_argument("--out-dir")

    bsub = sub.add_parser("bench", help="experiments").add_subparsers(
        dest="sub", metavar="subcommand", parser_class=_Parser)
    p = leaf(bsub, "inference", cmd_bench_inference, "time learned inference")
    p.add_argument("--model")
    _data_flags(p, size=False)
    _selection_flags(p)
    p.add_argument("--repeats", type=_positive_int, default=100)
    p.add_argument("--csv", default=None)
    p = leaf(bsub, "demons", cmd_bench_demons, "demons iterations x levels sweep")
    _data_flags(p)
    _selection_flags(p)
    p.add_argument("--iterations", type=_int_list, default=[10, 20, 40, 80])
    p.add_argument("--levels", type=_int_list, default=[1, 2, 3])
    p.add_argument("--csv", default=None)
    p = leaf(bsub, "ablation", cmd_bench_ablation, "train once per loss mode")
    _data_flags(p, size=False)
    _train_flags(p)
    p.add_argument("--out-dir")
    p = leaf(bsub, "progression", cmd_bench_progression, "compare checkpoints")
    p.add_argument("--checkpoints", nargs="+", help="label=path entries, earliest first")
    _data_flags(p)
    _selection_flags(p)
    p.add_argument("--out-dir")
    return root


def _leaf_parser(root, args):
    p = root
    for dest in ("command", "sub"):
        name = getattr(args, dest, None)
        if name is None:
            break
        action = next(a for a in p._actions if isinstance(a, argparse._SubParsersAction))
        p = action.choices[name]
    return p


def read_config(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(parser, args, argv):
    """Fill flags absent from ``argv`` with values from ``--config``."""
    given = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    actions = {a.dest: a for a in parser._actions if a.option_strings}
    for key, raw in read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            close = difflib.get_close_matches(key, list(actions), n=1)
            hint = f" (did you mean {close[0]}?)" if close else ""
            raise UsageError(f"{args.config}: unknown key {key!r}{hint}")
        if any(o in given for o in action.option_strings):
            continue
        if action.nargs == 0:
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            items = raw.split() if action.nargs in ("+", "*") else [raw]
            conv = action.type or str
            try:
                vals = [conv(v) for v in items]
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {exc}")
            if action.choices is not None and any(v not in action.choices for v in vals):
                raise UsageError(f"{args.config}: {key} must be one of {list(action.choices)}")
            value = vals if action.nargs in ("+", "*") else vals[0]
        setattr(args, key, value)


def parse(argv):
    root = build_parser()
    if not argv:
        raise UsageError(root.format_help().rstrip())
    args = root.parse_args(argv)
    if not hasattr(args, "func"):
        raise UsageError(_leaf_parser(root, args).format_usage().rstrip())
    leaf = _leaf_parser(root, args)
    if args.config:
        _apply_config(leaf, args, argv)
    missing = [n for n in REQUIRED.get(args.func, ()) if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{leaf.prog}: missing required {flags}")
    return args


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
        limit = threadpool_limits(args.threads) if args.threads else nullcontext()
        with limit:
            args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (WarpregError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
