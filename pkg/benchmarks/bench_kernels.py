#!/usr/bin/env python3
"""Benchmark the hot kernels: numba @njit builds against the pure-numpy
fallbacks.

Runs both paths directly (no env flag needed) and reports per-call medians.
The numpy fallback is what you get with CASSIRECON_NO_NUMBA=1.

Usage: python benchmarks/bench_kernels.py [--size 256] [--bands 28] [--repeats 30]
"""

import argparse
import statistics
import time

import numpy as np

from cassirecon import accel, kernels


def timeit(fn, repeats):
    fn()  # warm (JIT compile / cache load)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=256, help="spatial side length")
    ap.add_argument("--bands", type=int, default=28)
    ap.add_argument("--channels", type=int, default=28, help="conv feature channels")
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    H = W = args.size
    B = args.bands
    C = args.channels
    ws = W + B - 1

    phi = np.ascontiguousarray(rng.random((H, ws, B)))
    x = np.ascontiguousarray(rng.standard_normal((H, W, B)))
    y = np.ascontiguousarray(rng.standard_normal((H, ws)))
    xp = np.ascontiguousarray(rng.standard_normal((H + 2, W + 2, C)))
    cols = kernels.im2col_numpy(xp, 3, 3, 1)
    g = np.ascontiguousarray(rng.standard_normal(cols.shape))

    cases = [
        ("forward_project", lambda: kernels.forward_project_numpy(x, phi, 1),
         (lambda: kernels.forward_project_numba(x, phi, 1)) if accel.USE_NUMBA else None),
        ("adjoint_project", lambda: kernels.adjoint_project_numpy(y, phi, 1),
         (lambda: kernels.adjoint_project_numba(y, phi, 1)) if accel.USE_NUMBA else None),
        ("im2col 3x3", lambda: kernels.im2col_numpy(xp, 3, 3, 1),
         (lambda: kernels.im2col_numba(xp, 3, 3, 1)) if accel.USE_NUMBA else None),
        ("col2im 3x3", lambda: kernels.col2im_numpy(g, H + 2, W + 2, C, 3, 3, 1),
         (lambda: kernels.col2im_numba(g, H + 2, W + 2, C, 3, 3, 1)) if accel.USE_NUMBA else None),
    ]

    print(f"arrays: cube {H}x{W}x{B}, measurement {H}x{ws}, conv field {H}x{W}x{C}")
    print(f"numba available: {accel.HAS_NUMBA}, enabled: {accel.USE_NUMBA}")
    print(f"{'kernel':<18}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}")
    for name, np_fn, nb_fn in cases:
        t_np = timeit(np_fn, args.repeats) * 1e3
        if nb_fn is None:
            print(f"{name:<18}{t_np:>12.3f}{'-':>12}{'-':>9}")
            continue
        t_nb = timeit(nb_fn, args.repeats) * 1e3
        print(f"{name:<18}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
