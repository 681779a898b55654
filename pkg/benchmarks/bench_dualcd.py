#!/usr/bin/env python3
"""Benchmark the compiled dual-coordinate-descent kernel against the
pure-python fallback, and confirm both produce the same solutions.

Usage: python benchmarks/bench_dualcd.py [--quick]
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from supportnet import _dualcd_py  # noqa: E402
from supportnet.core_math import SeededRng  # noqa: E402

try:
    from supportnet import _dualcd as _compiled
except ImportError:
    _compiled = None


def solve(kernel, x, y, c, epochs, seed):
    n, t = x.shape
    q_diag = np.einsum("ij,ij->i", x, x)
    alpha = np.zeros(n)
    w = np.zeros(t)
    rng = SeededRng(seed)
    violation = np.inf
    start = time.perf_counter()
    for _ in range(epochs):
        order = rng.permutation(n).astype(np.int64)
        violation = kernel.cd_epoch(x, y, q_diag, alpha, w, c, order)
        if violation < 1e-6:
            break
    return time.perf_counter() - start, alpha, w, violation


def make_problem(n, t, seed):
    rng = np.random.default_rng(seed)
    half = n // 2
    x = np.vstack(
        [
            rng.normal(loc=+0.8, size=(half, t)),
            rng.normal(loc=-0.8, size=(n - half, t)),
        ]
    )
    y = np.concatenate([np.ones(half), -np.ones(n - half)])
    return np.ascontiguousarray(x), y


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="small sizes only")
    args = parser.parse_args()

    if _compiled is None:
        print("compiled kernel not built (python setup.py build_ext --inplace); nothing to compare")
        return 1

    sizes = [(500, 32), (2000, 64), (8000, 128)]
    if args.quick:
        sizes = sizes[:2]
    epochs = 60

    print(f"{'N':>6} {'T':>5} {'cython (s)':>11} {'python (s)':>11} {'speedup':>8}  agreement")
    for n, t in sizes:
        x, y = make_problem(n, t, seed=n)
        t_c, a_c, w_c, v_c = solve(_compiled, x, y, 1.0, epochs, seed=7)
        t_p, a_p, w_p, v_p = solve(_dualcd_py, x, y, 1.0, epochs, seed=7)
        w_diff = np.abs(w_c - w_p).max()
        a_diff = np.abs(a_c - a_p).max()
        ok = "ok" if (w_diff < 1e-8 and a_diff < 1e-8) else f"DIVERGED w={w_diff:.1e}"
        print(
            f"{n:>6} {t:>5} {t_c:>11.4f} {t_p:>11.4f} {t_p / t_c:>7.1f}x  "
            f"{ok} (max |dw|={w_diff:.1e}, kkt {v_c:.1e}/{v_p:.1e})"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
