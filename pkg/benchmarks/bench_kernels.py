#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-NumPy fallbacks.

Imports both backend modules directly (bypassing the PPBOOST_KERNELS switch),
checks they agree numerically, and times them on pipeline-shaped workloads.
Run:  python3 benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import time

import numpy as np

from ppboost.kernels import numba_backend as nb
from ppboost.kernels import numpy_backend as npb


def timeit(fn, *args, repeats=20):
    fn(*args)  # warm-up (JIT compile for the numba side)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    grid = rng.normal(0, 1, (16, 16))
    feats = np.ascontiguousarray(rng.normal(0, 1, (16, 16, 1)))
    k = 9
    dim = k * k * 1 + 1
    w_obj = rng.normal(0, 0.1, dim)
    w_box = rng.normal(0, 0.1, (4, dim))
    pos = (rng.random(256) < 0.1).astype(np.float64)
    targets = rng.normal(0, 0.5, (256, 4))
    boxes = np.abs(rng.normal(0, 20, (1024, 4))) + np.array([0, 0, 4, 4])
    boxes = np.ascontiguousarray(boxes)
    pa = np.ascontiguousarray(rng.integers(0, 128, (400, 2)).astype(np.float64))
    pb = np.ascontiguousarray(rng.integers(0, 128, (420, 2)).astype(np.float64))

    u_np, v_np = npb.window_design(feats, k)
    u_nb, v_nb = nb.window_design(feats, k)
    cases = [
        ("upsample_bilinear 16->128", lambda m: m.upsample_bilinear, (grid, 128, 128)),
        ("upsample_nearest 16->128", lambda m: m.upsample_nearest, (grid, 128, 128)),
        ("nms_keep n=1024", lambda m: m.nms_keep, (boxes, 0.7)),
        ("window_design 16x16 k=9", lambda m: m.window_design, (feats, k)),
        ("scores_deltas 256 cells", lambda m: m.scores_deltas, (u_np, v_np, w_obj, w_box)),
        (
            "detection_loss_grad",
            lambda m: m.detection_loss_grad,
            (u_np, v_np, w_obj, w_box, pos, targets, 1.0),
        ),
        ("count_within_tol 400x420", lambda m: m.count_within_tol, (pa, pb, 2.0)),
    ]

    print(f"{'kernel':<28} {'numpy':>12} {'numba':>12} {'speedup':>9}  agree")
    for name, pick, call_args in cases:
        out_np = pick(npb)(*call_args)
        out_nb = pick(nb)(*call_args)
        agree = _close(out_np, out_nb)
        t_np = timeit(pick(npb), *call_args, repeats=args.repeats)
        t_nb = timeit(pick(nb), *call_args, repeats=args.repeats)
        print(
            f"{name:<28} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us "
            f"{t_np / t_nb:>8.2f}x  {agree}"
        )


def _close(a, b):
    if isinstance(a, tuple):
        return all(_close(x, y) for x, y in zip(a, b))
    if isinstance(a, (int, float)):
        return bool(np.isclose(a, b, atol=1e-9))
    return bool(np.allclose(np.asarray(a), np.asarray(b), atol=1e-9))


if __name__ == "__main__":
    main()
