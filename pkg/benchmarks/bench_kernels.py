"""Time the numba kernels against the numpy fallback on identical inputs.

Usage: python benchmarks/bench_kernels.py [--runs 200000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from commdp import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(runs, rng):
    n, d, T = 20, 20, 4
    true_idx = rng.integers(T, size=n)
    uni = (rng.random((runs, n)), rng.random((runs, n)), rng.random((runs, d)))
    for capped in (False, True):
        yield (f"cluster_counts n={n} d={d} T={T} capped={capped} runs={runs}",
               lambda b, c=capped: kernels.cluster_counts(true_idx, T, n, 0.2, c, *uni, backend=b)[0])
    R, K = 5000, 550
    cats = np.minimum(rng.integers(20, size=(R, K)), 2).astype(np.uint8)
    values = np.array([16.3, -43.8, -0.34])
    yield (f"tail_positive_sums R={R} K={K}", lambda b: kernels.tail_positive_sums(cats, values, backend=b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        print("numba unavailable or disabled; only the numpy path can run")
    rng = np.random.default_rng(0)
    print(f"{'kernel':58s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}")
    for name, fn in cases(args.runs, rng):
        t_np, out_np = best_of(lambda: fn("numpy"), args.repeat)
        if kernels.HAS_NUMBA:
            fn("numba")  # compile
            t_nb, out_nb = best_of(lambda: fn("numba"), args.repeat)
            assert np.allclose(out_np, out_nb, rtol=1e-12, atol=0), name
            print(f"{name:58s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:58s} {t_np:10.4f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
