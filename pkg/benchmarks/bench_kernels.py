"""Time the numba and numpy kernel backends on evaluation-sized inputs.

Usage: python benchmarks/bench_kernels.py [--impressions N] [--repeat R]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from hierec import kernels


def impression_inputs(n: int, rng: np.random.Generator):
    sizes = rng.integers(2, 40, size=n)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    labels = (rng.random(offsets[-1]) < 0.1).astype(np.int64)
    scores = rng.normal(size=offsets[-1])
    return labels, scores, offsets


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--impressions", type=int, default=50_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    labels, scores, offsets = impression_inputs(args.impressions, rng)
    vectors = rng.normal(size=(1000, 64))
    rankings = np.stack([rng.permutation(3000) for _ in range(6)])
    cases = {
        "impression_metrics": lambda b: kernels.impression_metrics(labels, scores, offsets, backend=b),
        "cumulative_ilad": lambda b: kernels.cumulative_ilad(vectors, backend=b),
        "round_robin_merge": lambda b: kernels.round_robin_merge(rankings, 1000, backend=b),
    }
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in cases.items():
        fn("numba")  # compile outside the timed region
        times = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3
                 for b in ("numpy", "numba")}
        print(f"{name:<20}{times['numpy']:>12.2f}{times['numba']:>12.2f}"
              f"{times['numpy'] / times['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
