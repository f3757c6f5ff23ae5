"""Compare the numba and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is timed on inputs sized like a large card sort (100 cards,
300 participants, 9999 Mantel permutations).  The numba timings exclude
the first, compiling call.
"""

import argparse
import time

import numpy as np

from cardsim.kernels import numba_backend, numpy_backend


def inputs(seed=0, n=100, participants=300, k=12, perms=9999):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, size=(participants, n)).astype(np.int64)
    X = rng.normal(size=(n, n - 1))
    centers = X[rng.choice(n, k, replace=False)].copy()
    D = rng.random((n, n))
    D = D + D.T
    np.fill_diagonal(D, 0)
    iu, ju = np.triu_indices(n, 1)
    y = rng.random(len(iu))
    P = rng.permuted(np.tile(np.arange(n), (perms, 1)), axis=1)
    return {
        "cooccurrence": (labels,),
        "lloyd": (X, centers, 300, 1e-6),
        "mantel_dots": (D, iu, ju, y - y.mean(), P),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    nb = numba_backend()
    data = inputs()
    print(f"{'kernel':<14}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}")
    for name, kargs in data.items():
        t_np = best_of(getattr(numpy_backend, name), kargs, args.repeat)
        if nb is None:
            print(f"{name:<14}{t_np:>12.4f}{'n/a':>12}{'':>10}")
            continue
        getattr(nb, name)(*kargs)  # compile
        t_nb = best_of(getattr(nb, name), kargs, args.repeat)
        print(f"{name:<14}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
