"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

The numba column includes nothing of the compile time; each kernel is called
once before timing.
"""
import argparse
import timeit

import numpy as np

from ctxmine import _kernels


def _cases(rng):
    X = rng.normal(size=(400, 8))
    K = np.exp(-0.5 * np.sum((X[:, None] - X[None]) ** 2, axis=2) / 8)
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=400) > 0, 1.0, -1.0)

    Xs = rng.normal(size=(3500, 8))
    r = rng.normal(size=3500)
    idx = np.arange(3500, dtype=np.int64)

    Y = rng.normal(size=(300, 2))
    P = np.abs(rng.normal(size=(300, 300)))
    P = P + P.T
    np.fill_diagonal(P, 0.0)
    P /= P.sum()

    pos = np.sort(rng.normal(0.6, 0.1, 1750))
    neg = np.sort(rng.normal(0.3, 0.1, 1750))
    grid = np.arange(0.2, 0.7, 0.005)

    return {
        "smo (n=400)": ((_kernels._np_smo, _kernels._nb_smo), (K, y, 1.0, 1e-3, 100000)),
        "best_split (n=3500, p=8)": ((_kernels._np_best_split, _kernels._nb_best_split), (Xs, r, idx, 1)),
        "tsne_grad (n=300)": ((_kernels._np_tsne_grad, _kernels._nb_tsne_grad), (Y, P)),
        "threshold_correct (n=3500)": ((_kernels._np_threshold_correct, _kernels._nb_threshold_correct),
                                       (pos, neg, grid)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; both columns run the numpy code")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, ((np_fn, nb_fn), case) in _cases(rng).items():
        nb_fn(*case)
        t_np = min(timeit.repeat(lambda: np_fn(*case), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: nb_fn(*case), number=1, repeat=args.repeat))
        print(f"{name:<28}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
