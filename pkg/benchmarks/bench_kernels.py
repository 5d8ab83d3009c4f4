"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each row reports the best-of-N wall time per call for both variants and the
max absolute difference between their outputs. The first numba call
(compilation) is excluded.
"""

import argparse
import time

import numpy as np

from ascbench import kernels as k


def _best(fn, args, repeat):
    fn(*args)  # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


def cases(quick=False):
    rng = np.random.default_rng(0)
    frames = 100 if quick else 499  # one 5 s clip at hop 441
    x_fft = rng.standard_normal((frames, 1024)) + 0j
    n = 4 if quick else 32
    x_conv = rng.standard_normal((n, 16, 56, 56))
    cols_shape = k.im2col_numpy(x_conv, 3, 3, 1).shape
    dcols = rng.standard_normal(cols_shape)
    x_pool = rng.standard_normal((n, 16, 112, 112))
    pooled, arg = k.maxpool_numpy(x_pool, 2)
    dout = rng.standard_normal(pooled.shape)
    return [
        ("fft_rows", f"{frames}x1024", k.fft_rows_jit, k.fft_rows_numpy, (x_fft,)),
        ("im2col", f"{n}x16x56x56 k3", k.im2col_jit, k.im2col_numpy, (x_conv, 3, 3, 1)),
        ("col2im", f"{n}x16x56x56 k3", k.col2im_jit, k.col2im_numpy, (dcols, x_conv.shape, 3, 3, 1)),
        ("maxpool", f"{n}x16x112x112 p2", k.maxpool_jit, k.maxpool_numpy, (x_pool, 2)),
        ("maxpool_back", f"{n}x16x112x112 p2", k.maxpool_back_jit, k.maxpool_back_numpy,
         (dout, arg, 2, 112, 112)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)
    print(f"{'kernel':<14}{'input':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max diff':>11}")
    for name, size, jit, ref, fargs in cases(args.quick):
        tj, oj = _best(jit, fargs, args.repeat)
        tn, on = _best(ref, fargs, args.repeat)
        print(f"{name:<14}{size:<22}{tj * 1e3:>10.2f}{tn * 1e3:>10.2f}{tn / tj:>8.1f}x{_diff(oj, on):>11.1e}")


if __name__ == "__main__":
    main()
