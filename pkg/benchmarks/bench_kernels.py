"""Benchmark the hot conv/pool kernels: numba JIT vs pure-numpy im2col.

Shapes mirror the layers the training pipeline actually runs. Usage:

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from audiocolor.kernels import numba_backend, numpy_backend

CASES = [
    # (tag, batch, H, W, Cin, Cout)
    ("stem 32px", 16, 32, 32, 1, 16),
    ("enc 16px", 16, 16, 16, 16, 32),
    ("dec 16px", 16, 16, 16, 96, 32),
    ("audio 49x32", 16, 49, 32, 8, 16),
    ("deep 8px", 16, 8, 8, 64, 64),
]


def bench(fn, *args, n_warmup=2, n_iter=5):
    for _ in range(n_warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(n_iter):
        fn(*args)
    return (time.perf_counter() - t0) / n_iter * 1000.0  # ms


def run_case(tag, n, h, w, cin, cout, n_iter):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, h, w, cin))
    wgt = rng.normal(size=(3, 3, cin, cout))
    b = rng.normal(size=cout)
    dy = rng.normal(size=(n, h, w, cout))

    rows = []
    for name, fwd_args, op in [
        ("conv fwd", (x, wgt, b), "conv2d_forward"),
        ("conv dX", (dy, wgt), "conv2d_backward_input"),
        ("conv dW", (x, dy, 3, 3), "conv2d_backward_params"),
    ]:
        t_np = bench(getattr(numpy_backend, op), *fwd_args, n_iter=n_iter)
        t_nb = bench(getattr(numba_backend, op), *fwd_args, n_iter=n_iter)
        rows.append((f"{tag:12s} {name}", t_np, t_nb))
    t_np = bench(numpy_backend.maxpool2_forward, x, n_iter=n_iter)
    t_nb = bench(numba_backend.maxpool2_forward, x, n_iter=n_iter)
    rows.append((f"{tag:12s} pool fwd", t_np, t_nb))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="fewer timed iterations")
    args = ap.parse_args()
    n_iter = 2 if args.quick else 5

    print(f"{'case':28s} {'numpy ms':>10s} {'numba ms':>10s} {'numba speedup':>14s}")
    tot_np = tot_nb = 0.0
    for case in CASES:
        for name, t_np, t_nb in run_case(*case, n_iter=n_iter):
            tot_np += t_np
            tot_nb += t_nb
            print(f"{name:28s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:13.2f}x")
    print(f"{'TOTAL':28s} {tot_np:10.2f} {tot_nb:10.2f} {tot_np / tot_nb:13.2f}x")


if __name__ == "__main__":
    main()
