"""Compare the compiled kernels with the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 50]

Prints mean time per call for each kernel and backend, then the speed-up
of a full network training step and inference pass under each backend.
"""

import argparse
import time

import numpy as np

from warpreg import autodiff as ad
from warpreg import kernels, unet
from warpreg.dataset import gen_phantom


def timeit(fn, repeats):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def kernel_cases(rng):
    img = rng.random((64, 64)).astype(np.float32)
    ii, jj = np.meshgrid(np.arange(64.0), np.arange(64.0), indexing="ij")
    ci = (ii + rng.uniform(-3, 3, ii.shape)).astype(np.float32)
    cj = (jj + rng.uniform(-3, 3, jj.shape)).astype(np.float32)
    g = rng.normal(size=(64, 64)).astype(np.float32)
    x = rng.random((64, 64, 16)).astype(np.float32)
    cols = kernels.im2col_same(x, 3)
    k = np.array([0.05, 0.25, 0.4, 0.25, 0.05], np.float32)
    return {
        "warp_bilinear": lambda be: kernels.warp_bilinear(img, ci, cj, backend=be),
        "warp_bilinear_backward": lambda be: kernels.warp_bilinear_backward(img, ci, cj, g, backend=be),
        "blur_clamped": lambda be: kernels.blur_clamped(img, k, backend=be),
        "im2col_same 64x64x16": lambda be: kernels.im2col_same(x, 3, backend=be),
        "col2im_same 64x64x16": lambda be: kernels.col2im_same(cols, 64, 64, 16, 3, backend=be),
    }


def network_cases():
    """Run a full step with every kernel call routed to one backend."""
    model = unet.build_unet(unet.PRESETS["desk"], 0)
    s, t = gen_phantom(64, 1), gen_phantom(64, 2)
    tc = unet.TrainConfig()
    rng = np.random.default_rng(0)

    def with_backend(be, fn):
        saved = kernels._impl
        kernels._impl = kernels._pick(be)
        try:
            return fn()
        finally:
            kernels._impl = saved

    return {
        "unet inference": lambda be: with_backend(be, lambda: unet.forward_register(model, s, t)),
        "unet train step": lambda be: with_backend(
            be, lambda: ad.adam_step(model.copy().params,
                                     unet.train_step(model, s, t, tc, rng=rng).grads,
                                     ad.AdamState())),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()
    try:
        kernels._pick("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    cases = {**kernel_cases(rng), **network_cases()}
    print(f"{'case':<26} {'cython ms':>10} {'python ms':>10} {'speed-up':>9}")
    for name, fn in cases.items():
        reps = max(1, args.repeats // 5) if name.startswith("unet") else args.repeats
        tc = timeit(lambda: fn("cython"), reps)
        tp = timeit(lambda: fn("python"), reps)
        print(f"{name:<26} {tc:>10.3f} {tp:>10.3f} {tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
