"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on representative workloads with both backends and
prints a timing table.  The numpy reference path is always available;
when numba is missing or disabled via SO3HARMONICS_NO_NUMBA=1 both
columns run the numpy path.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from so3harmonics import _kernels
from so3harmonics._kernels import (_legendre_table_numpy, _small_d_stack_numpy,
                                   legendre_table, small_d_stack)


def timeit(fn, repeats: int) -> float:
    fn()  # warm up (jit compilation, term tables)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x_small = rng.uniform(-1, 1, 10_000)
    x_big = rng.uniform(-1, 1, 100_000)
    b_small = rng.uniform(0, np.pi, 10_000)
    b_big = rng.uniform(0, np.pi, 100_000)
    rows = [
        ("legendre L=6, n=10k",
         lambda: _legendre_table_numpy(x_small, 6),
         lambda: legendre_table(x_small, 6)),
        ("legendre L=12, n=100k",
         lambda: _legendre_table_numpy(x_big, 12),
         lambda: legendre_table(x_big, 12)),
        ("small-d l=4, n=10k",
         lambda: _small_d_stack_numpy(4, b_small),
         lambda: small_d_stack(4, b_small)),
        ("small-d l=6, n=100k",
         lambda: _small_d_stack_numpy(6, b_big),
         lambda: small_d_stack(6, b_big)),
    ]

    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'workload':24s} {'numpy (s)':>12s} {'active (s)':>12s} {'speedup':>9s}")
    for name, numpy_fn, active_fn in rows:
        t_np = timeit(numpy_fn, args.repeats)
        t_ac = timeit(active_fn, args.repeats)
        print(f"{name:24s} {t_np:12.4f} {t_ac:12.4f} {t_np / t_ac:8.1f}x")


if __name__ == "__main__":
    main()
