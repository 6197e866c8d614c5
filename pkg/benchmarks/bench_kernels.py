"""Numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

The first numba call (compilation, or a cache load) is timed separately and
left out of the per-call figures.
"""

import argparse
import time

import numpy as np

from strokeplan import kernels
from strokeplan.stroke import StrokeAction, WidthLaw, stamp_offsets


def _cases():
    rng = np.random.default_rng(0)
    u = StrokeAction(30.0, 40.0, 60.0, 10.0, 35.0, 2.0)
    q1, q2 = (12.0, 30.0), (45.0, 38.0)
    cx, cy = stamp_offsets(u)
    r = np.full(cx.shape, WidthLaw().radius(u.F))
    blob = np.zeros((102, 102), dtype=bool)
    yy, xx = np.mgrid[:102, :102]
    for _ in range(6):
        x0, y0 = rng.uniform(15, 85, 2)
        blob |= (xx - x0) ** 2 + (yy - y0) ** 2 < rng.uniform(40, 150)
    blob[0, :] = blob[-1, :] = blob[:, 0] = blob[:, -1] = False
    tables = (kernels.NB_COUNT, kernels.NB_TRANSITIONS, kernels.NB_SIMPLE)
    return {
        "bezier_stamps": (lambda f: f(float(q1[0]), float(q1[1]), float(q2[0]), float(q2[1]), 512, 0),
                          kernels.bezier_stamps_numba, kernels.bezier_stamps_numpy),
        "stamp_disks": (lambda f: f(np.zeros((100, 100), dtype=bool), cx, cy, r, 30, 40),
                        kernels.stamp_disks_numba, kernels.stamp_disks_numpy),
        "min_dist2": (lambda f: f(100, 100, cx, cy, 30, 40),
                      kernels.min_dist2_numba, kernels.min_dist2_numpy),
        "thin": (lambda f: f(blob.copy(), *tables), kernels.thin_numba, kernels.thin_numpy),
    }


def _time(call, fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        call(fn)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'kernel':<14} {'first numba':>12} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for name, (call, jit_fn, np_fn) in _cases().items():
        t0 = time.perf_counter()
        call(jit_fn)
        first = time.perf_counter() - t0
        t_jit, t_np = _time(call, jit_fn, args.repeat), _time(call, np_fn, args.repeat)
        print(f"{name:<14} {first * 1e3:>10.1f}ms {t_jit * 1e3:>8.3f}ms {t_np * 1e3:>8.3f}ms {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
