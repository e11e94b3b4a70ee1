"""Compare the compiled kernel core against the pure-numpy fallback.

Times the four dispatched kernels (pairwise squared distances, neighbor
selection, farthest-point sampling, masked weighted sums) and one full
neighbor-masked centroid attention call under each backend, and verifies
the two agree numerically before timing.

Usage: python benchmarks/compare_backends.py [--n 2048] [--d 32] [--m 64]
"""

import argparse
import time

import numpy as np

from centroid_attention import attention, clustering, kernels


def best_of(fn, reps=7):
    fn()
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        best = min(best, time.perf_counter_ns() - t0)
    return best


def check_parity(x, u, m, k):
    """Both backends must produce identical selections and near-identical
    floats before any timing is worth reading."""
    results = {}
    for name in ("python", "compiled"):
        kernels.set_backend(name)
        w = np.abs(np.random.default_rng(0).standard_normal((m, k)))
        results[name] = (
            kernels.pairwise_sqdist(x, u),
            kernels.knn_indices(x, u, k),
            kernels.fps_indices(x, m, 0),
            kernels.gather_weighted_sum(w, kernels.knn_indices(x, u, k), x),
        )
    py, cy = results["python"], results["compiled"]
    assert np.allclose(py[0], cy[0], atol=1e-10), "pairwise distances disagree"
    assert np.array_equal(py[1], cy[1]), "neighbor lists disagree"
    assert np.array_equal(py[2], cy[2]), "farthest-point picks disagree"
    assert np.allclose(py[3], cy[3], atol=1e-10), "weighted sums disagree"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--m", type=int, default=64)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--reps", type=int, default=7)
    args = ap.parse_args()

    if not kernels.HAVE_COMPILED:
        raise SystemExit("compiled backend not built; install the package first")

    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.n, args.d))
    u = rng.standard_normal((args.m, args.d))
    check_parity(x, u, args.m, args.k)

    cfg = attention.CentroidAttentionConfig(
        num_centroids=args.m, num_steps=3, norm_axis="inputs",
        initializer=clustering.FarthestPointSampling(start=0), knn_k=args.k)

    cases = {
        "pairwise_sqdist": lambda: kernels.pairwise_sqdist(x, u),
        "knn_indices": lambda: kernels.knn_indices(x, u, args.k),
        "fps_indices": lambda: kernels.fps_indices(x, args.m, 0),
        "centroid_attention(knn)": lambda: attention.centroid_attention(x, cfg),
    }
    print(f"n={args.n} d={args.d} m={args.m} k={args.k}, best of {args.reps}")
    print(f"{'kernel':<26} {'python':>12} {'compiled':>12} {'speedup':>9}")
    for name, fn in cases.items():
        times = {}
        for backend in ("python", "compiled"):
            kernels.set_backend(backend)
            times[backend] = best_of(fn, args.reps)
        print(f"{name:<26} {times['python'] / 1e6:>10.2f}ms "
              f"{times['compiled'] / 1e6:>10.2f}ms "
              f"{times['python'] / times['compiled']:>8.1f}x")
    kernels.set_backend("auto")


if __name__ == "__main__":
    main()
