"""Benchmark the jitted kernels against their pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeats 5]

Covers the two hot paths: the stump split scan (dominates training) and the
assignment flow solve (dominates evaluation). The numba timings exclude the
first warm-up call.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from deccaf import _flow_kernels, _stump_kernels


def _time(fn, repeats):
    fn()  # warm-up (JIT compile, cache touch)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_stump_scan(repeats):
    rng = np.random.default_rng(0)
    print("stump split scan (n rows x d features)")
    for n, d in ((5_000, 13), (50_000, 13), (5_000, 140)):
        X = rng.standard_normal((n, d))
        order = np.argsort(X, axis=0, kind="stable")
        xs = np.take_along_axis(X, order, axis=0)
        grad = rng.normal(0, 1, n)
        hess = rng.uniform(0.01, 0.25, n)
        t_np = _time(lambda: _stump_kernels.best_split_numpy(xs, order, grad, hess, 1.0), repeats)
        row = f"  {n:>7} x {d:<4} numpy {t_np * 1e3:8.2f} ms"
        if _stump_kernels.best_split_numba is not None:
            t_nb = _time(
                lambda: _stump_kernels.best_split_numba(xs, order, grad, hess, 1.0), repeats
            )
            row += f"   numba {t_nb * 1e3:8.2f} ms   speedup {t_np / t_nb:5.1f}x"
        print(row)


def bench_flow_solve(repeats):
    rng = np.random.default_rng(1)
    print("assignment flow solve (n instances x K decision-makers)")
    for n, K in ((500, 10), (1_500, 10), (4_000, 10)):
        prob = rng.random((n, K))
        caps = np.full(K, n // K)
        caps[: n - caps.sum()] += 1
        cost = -prob
        t_np = _time(lambda: _flow_kernels.solve_assignment_numpy(cost, caps), repeats)
        row = f"  {n:>7} x {K:<4} numpy {t_np * 1e3:8.2f} ms"
        if _flow_kernels.solve_assignment_numba is not None:
            t_nb = _time(lambda: _flow_kernels.solve_assignment_numba(cost, caps), repeats)
            row += f"   numba {t_nb * 1e3:8.2f} ms   speedup {t_np / t_nb:5.1f}x"
            s_np, a_np = _flow_kernels.solve_assignment_numpy(cost, caps)
            s_nb, a_nb = _flow_kernels.solve_assignment_numba(cost, caps)
            assert s_np == s_nb and np.array_equal(a_np, a_nb), "engines disagree"
        print(row)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    bench_stump_scan(args.repeats)
    bench_flow_solve(args.repeats)


if __name__ == "__main__":
    main()
