"""Compare the compiled and pure-Python kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--n 2000] [--queries 200] [--k 5]

Times kd-tree k-NN queries and Lloyd nearest-centroid assignment with both
backends and checks that they return identical results.  The compiled
backend is skipped (with a note) when the extension is not built.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from diffattn import _pykernels
from diffattn.exemplars import EmbeddingStore, build_index

try:
    from diffattn import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _time(fn, repeat: int = 3) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_knn(mod, index, queries, k):
    def go():
        res = []
        for q in queries:
            res.append(
                mod.knn_query(index.points, index._rank, index.lo, index.hi, index.left, index.right, index.start, index.end, q, k, -1)
            )
        return res

    return _time(go)


def bench_assign(mod, points, centroids):
    return _time(lambda: mod.assign_nearest(points, centroids))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--centroids", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    pts = rng.normal(size=(args.n, args.dim))
    index = build_index(EmbeddingStore.from_array(pts))
    queries = rng.normal(size=(args.queries, args.dim))
    cents = rng.normal(size=(args.centroids, args.dim))

    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels is not None else [])
    if _ckernels is None:
        print("compiled extension not available; timing the Python fallback only")
    results = {}
    print(f"{'kernel':<10}{'backend':<10}{'seconds':>12}")
    for name, mod in backends:
        t, out = bench_knn(mod, index, queries, args.k)
        results[("knn", name)] = out
        print(f"{'knn':<10}{name:<10}{t:>12.5f}")
        t, out = bench_assign(mod, pts, cents)
        results[("assign", name)] = out
        print(f"{'assign':<10}{name:<10}{t:>12.5f}")
    if _ckernels is not None:
        same_knn = all(
            np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
            for a, b in zip(results[("knn", "python")], results[("knn", "cython")])
        )
        same_assign = all(np.array_equal(a, b) for a, b in zip(results[("assign", "python")], results[("assign", "cython")]))
        print(f"identical results: knn={same_knn} assign={same_assign}")


if __name__ == "__main__":
    main()
