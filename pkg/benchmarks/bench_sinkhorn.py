"""Benchmark the soft top-k kernels: compiled extension vs numpy fallback.

Runs the forward solve and the unrolled backward pass on workloads shaped
like one trainer meta step (many short lists) and reports per-backend
timings. Usage:

    python benchmarks/bench_sinkhorn.py [--lists 64] [--n 25] [--repeats 30]
"""
import argparse
import time

import numpy as np

from labelcraft._kernels import reference

try:
    from labelcraft._kernels import _sinkhorn as compiled
except ImportError:
    compiled = None


def workload(rng, n_lists, n, k):
    s_parts = [rng.normal(size=n) for _ in range(n_lists)]
    s_parts = [(p - p.mean()) / p.std() for p in s_parts]
    offsets = np.arange(0, n * (n_lists + 1), n, dtype=np.int64)
    s = np.ascontiguousarray(np.concatenate(s_parts))
    ks = np.full(n_lists, k, dtype=np.int64)
    eps = np.full(n_lists, 0.1)
    a0s = np.array([p.min() for p in s_parts])
    a1s = np.array([p.max() for p in s_parts])
    upstream = rng.normal(size=s.shape[0])
    return s, offsets, ks, eps, a0s, a1s, upstream


def bench(impl, args, repeats, max_iters=100, tol=1e-6):
    s, offsets, ks, eps, a0s, a1s, upstream = args
    t_solve = t_vjp = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        f_hist, g_hist, n_iters, _, _, alpha = impl.solve_many(
            s, offsets, ks, eps, a0s, a1s, max_iters, tol
        )
        t_solve += time.perf_counter() - t0
        t0 = time.perf_counter()
        impl.vjp_many(s, offsets, ks, eps, a0s, a1s, f_hist, g_hist, np.asarray(n_iters), upstream)
        t_vjp += time.perf_counter() - t0
    return t_solve / repeats, t_vjp / repeats, alpha


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lists", type=int, default=64, help="lists per batch (meta users)")
    parser.add_argument("--n", type=int, default=25, help="scores per list")
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    cli = parser.parse_args()

    rng = np.random.default_rng(cli.seed)
    args = workload(rng, cli.lists, cli.n, cli.k)
    print(f"workload: {cli.lists} lists x {cli.n} scores, k={cli.k}, {cli.repeats} repeats")

    results = {}
    for name, impl in (("numpy", reference), ("compiled", compiled)):
        if impl is None:
            print(f"{name:>9}: not built")
            continue
        solve_t, vjp_t, alpha = bench(impl, args, cli.repeats)
        results[name] = (solve_t, vjp_t, alpha)
        print(f"{name:>9}: solve {solve_t * 1e3:8.2f} ms   backward {vjp_t * 1e3:8.2f} ms")

    if len(results) == 2:
        diff = np.abs(results["numpy"][2] - results["compiled"][2]).max()
        su_s = results["numpy"][0] / results["compiled"][0]
        su_v = results["numpy"][1] / results["compiled"][1]
        print(f"speedup: solve {su_s:.1f}x, backward {su_v:.1f}x; max |alpha diff| = {diff:.2e}")


if __name__ == "__main__":
    main()
