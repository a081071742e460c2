"""Pure-Python/numpy versions of the compiled kernels in ``_ckernels.pyx``.

Both implementations accumulate squared distances dimension by dimension in
the same order, so they return bit-identical results.
"""
from __future__ import annotations

import numpy as np


def sq_dists(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = np.zeros(points.shape[0])
    for j in range(points.shape[1]):
        diff = points[:, j] - q[j]
        d += diff * diff
    return d


def box_dist(lo: np.ndarray, hi: np.ndarray, q: np.ndarray) -> float:
    acc = 0.0
    for j in range(q.shape[0]):
        if q[j] < lo[j]:
            t = lo[j] - q[j]
            acc += t * t
        elif q[j] > hi[j]:
            t = q[j] - hi[j]
            acc += t * t
    return acc


def knn_query(points, rank, lo, hi, left, right, start, end, query, k, exclude):
    """Exact k nearest rows of ``points`` (tree-ordered) to ``query``.

    Returns ``(rows, dists)`` sorted by (distance, rank[row]).  ``exclude``
    is a row to skip, or -1.
    """
    best_d: list[float] = []
    best_i: list[int] = []
    if k <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0)

    best_r: list[int] = []

    def offer(d: float, i: int) -> None:
        n = len(best_d)
        ri = rank[i]
        if n == k and (d > best_d[-1] or (d == best_d[-1] and ri > best_r[-1])):
            return
        pos = n
        while pos > 0 and (best_d[pos - 1] > d or (best_d[pos - 1] == d and best_r[pos - 1] > ri)):
            pos -= 1
        best_r.insert(pos, ri)
        best_d.insert(pos, d)
        best_i.insert(pos, i)
        if len(best_d) > k:
            best_d.pop()
            best_i.pop()
            best_r.pop()

    stack = [0]
    while stack:
        node = stack.pop()
        if len(best_d) == k and box_dist(lo[node], hi[node], query) > best_d[-1]:
            continue
        if left[node] < 0:
            s, e = start[node], end[node]
            d = sq_dists(points[s:e], query)
            for off in range(e - s):
                r = s + off
                if r != exclude:
                    offer(float(d[off]), r)
            continue
        a, b = left[node], right[node]
        da = box_dist(lo[a], hi[a], query)
        db = box_dist(lo[b], hi[b], query)
        # push the farther child first so the nearer one is searched first
        if da <= db:
            stack.append(b)
            stack.append(a)
        else:
            stack.append(a)
            stack.append(b)
    return np.asarray(best_i, dtype=np.int64), np.asarray(best_d)


def assign_nearest(points: np.ndarray, centroids: np.ndarray):
    """Index of the nearest centroid per point (lowest index on ties) and its squared distance."""
    n = points.shape[0]
    best = np.full(n, np.inf)
    idx = np.zeros(n, dtype=np.int64)
    for c in range(centroids.shape[0]):
        d = sq_dists(points, centroids[c])
        better = d < best
        best[better] = d[better]
        idx[better] = c
    return idx, best
