"""Benchmark the numba kernels against the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py [--quick]

The same comparison is what the LIDARLIFT_NUMBA=0 environment flag
switches at import time; this script imports both backends directly so
one process can time them side by side.
"""

import argparse
import time

import numpy as np

from lidarlift.kernels import get_backend


def timeit(fn, repeats):
    fn()  # warm-up (numba compiles here)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = parser.parse_args()

    scale = 4 if args.quick else 1
    rng = np.random.default_rng(0)
    queries = rng.standard_normal((8192 // scale, 3)) * 10
    refs = rng.standard_normal((8192 // scale, 3)) * 10
    big_a = rng.standard_normal((20000 // scale, 3)) * 10
    big_b = rng.standard_normal((20000 // scale, 3)) * 10
    seg_vals = rng.standard_normal((200000 // scale, 16))
    seg_ids = rng.integers(0, 8192, len(seg_vals))

    cases = [
        (f"knn        {len(queries)}x{len(refs)} k=16", lambda b: b.knn(queries, refs, 16)),
        (f"nearest    {len(big_a)}x{len(big_b)}", lambda b: b.nearest_sqdist(big_a, big_b)),
        (f"fps        {len(refs)} -> {1024 // scale}", lambda b: b.fps(refs, 1024 // scale, 7)),
        (f"segment    {len(seg_vals)}x16 -> 8192", lambda b: b.segment_sum(seg_vals, seg_ids, 8192)),
    ]

    numpy_b = get_backend("numpy")
    numba_b = get_backend("numba")
    repeats = 3 if args.quick else 5

    print(f"{'kernel':38s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for label, call in cases:
        t_np = timeit(lambda: call(numpy_b), repeats)
        t_nb = timeit(lambda: call(numba_b), repeats)
        print(f"{label:38s} {t_np * 1e3:9.1f}ms {t_nb * 1e3:9.1f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
