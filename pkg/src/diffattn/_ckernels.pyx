# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kd-tree search and nearest-centroid assignment."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _box_dist(const double[:, ::1] lo, const double[:, ::1] hi, Py_ssize_t node,
                             const double[::1] q) noexcept nogil:
    cdef double acc = 0.0, t
    cdef Py_ssize_t j
    for j in range(q.shape[0]):
        if q[j] < lo[node, j]:
            t = lo[node, j] - q[j]
            acc += t * t
        elif q[j] > hi[node, j]:
            t = q[j] - hi[node, j]
            acc += t * t
    return acc


cdef inline bint _worse(double d, Py_ssize_t i, double bd, Py_ssize_t bi) noexcept nogil:
    return d > bd or (d == bd and i > bi)


def knn_query(const double[:, ::1] points, const cnp.int64_t[::1] rank, const double[:, ::1] lo, const double[:, ::1] hi,
              const cnp.int64_t[::1] left, const cnp.int64_t[::1] right,
              const cnp.int64_t[::1] start, const cnp.int64_t[::1] end,
              const double[::1] query, Py_ssize_t k, Py_ssize_t exclude):
    if k <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    cdef Py_ssize_t n_nodes = left.shape[0], dim = points.shape[1]
    best_d_arr = np.empty(k)
    best_i_arr = np.empty(k, dtype=np.int64)
    stack_arr = np.empty(n_nodes + 1, dtype=np.int64)
    cdef double[::1] best_d = best_d_arr
    cdef cnp.int64_t[::1] best_i = best_i_arr
    cdef cnp.int64_t[::1] stack = stack_arr
    cdef Py_ssize_t top = 0, n_best = 0, node, r, j, pos, a, b
    cdef double d, diff, da, db
    with nogil:
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if n_best == k and _box_dist(lo, hi, node, query) > best_d[k - 1]:
                continue
            if left[node] < 0:
                for r in range(start[node], end[node]):
                    if r == exclude:
                        continue
                    d = 0.0
                    for j in range(dim):
                        diff = points[r, j] - query[j]
                        d += diff * diff
                    if n_best == k and _worse(d, rank[r], best_d[k - 1], rank[best_i[k - 1]]):
                        continue
                    pos = n_best if n_best < k else k - 1
                    while pos > 0 and _worse(best_d[pos - 1], rank[best_i[pos - 1]], d, rank[r]):
                        best_d[pos] = best_d[pos - 1]
                        best_i[pos] = best_i[pos - 1]
                        pos -= 1
                    best_d[pos] = d
                    best_i[pos] = r
                    if n_best < k:
                        n_best += 1
                continue
            a = left[node]
            b = right[node]
            da = _box_dist(lo, hi, a, query)
            db = _box_dist(lo, hi, b, query)
            if da <= db:
                stack[top] = b
                stack[top + 1] = a
            else:
                stack[top] = a
                stack[top + 1] = b
            top += 2
    return best_i_arr[:n_best].copy(), best_d_arr[:n_best].copy()


def assign_nearest(const double[:, ::1] points, const double[:, ::1] centroids):
    cdef Py_ssize_t n = points.shape[0], kc = centroids.shape[0], dim = points.shape[1]
    idx_arr = np.zeros(n, dtype=np.int64)
    best_arr = np.empty(n)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, c, j
    cdef double d, diff
    with nogil:
        for i in range(n):
            best[i] = 1.0 / 0.0
            for c in range(kc):
                d = 0.0
                for j in range(dim):
                    diff = points[i, j] - centroids[c, j]
                    d += diff * diff
                if d < best[i]:
                    best[i] = d
                    idx[i] = c
    return idx_arr, best_arr
