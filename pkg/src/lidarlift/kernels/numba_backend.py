"""Numba-compiled kernels (default backend).

Same contracts as :mod:`lidarlift.kernels.numpy_backend`; scalar
accumulation order is kept identical so the two backends agree bit for
bit wherever the arithmetic is order-stable.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _knn_impl(queries, refs, k):
    n = queries.shape[0]
    m = refs.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    d2 = np.empty((n, k), dtype=np.float64)
    for q in prange(n):
        best_d = np.full(k, np.inf)
        best_i = np.full(k, -1, dtype=np.int64)
        qx, qy, qz = queries[q, 0], queries[q, 1], queries[q, 2]
        for j in range(m):
            dx = qx - refs[j, 0]
            dy = qy - refs[j, 1]
            dz = qz - refs[j, 2]
            d = dx * dx + dy * dy + dz * dz
            last = best_d[k - 1]
            # strict comparisons keep the lower-index candidate on ties
            if d < last or (d == last and best_i[k - 1] > j):
                p = k - 1
                while p > 0 and (
                    d < best_d[p - 1] or (d == best_d[p - 1] and j < best_i[p - 1])
                ):
                    best_d[p] = best_d[p - 1]
                    best_i[p] = best_i[p - 1]
                    p -= 1
                best_d[p] = d
                best_i[p] = j
        idx[q] = best_i
        d2[q] = best_d
    return idx, d2


def knn(queries, refs, k):
    """k nearest references per query, ascending distance, ties to lower index."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    return _knn_impl(queries, refs, k)


@njit(cache=True, parallel=True)
def _nearest_impl(a, b):
    n = a.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in prange(n):
        ax, ay, az = a[i, 0], a[i, 1], a[i, 2]
        best = np.inf
        for j in range(b.shape[0]):
            dx = ax - b[j, 0]
            dy = ay - b[j, 1]
            dz = az - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        out[i] = best
    return out


def nearest_sqdist(a, b):
    """Squared distance from each point of `a` to its nearest point in `b`."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _nearest_impl(a, b)


@njit(cache=True)
def _fps_impl(points, m, first):
    n = points.shape[0]
    sel = np.empty(m, dtype=np.int64)
    sel[0] = first
    dist = np.empty(n, dtype=np.float64)
    for i in range(n):
        dx = points[i, 0] - points[first, 0]
        dy = points[i, 1] - points[first, 1]
        dz = points[i, 2] - points[first, 2]
        dist[i] = dx * dx + dy * dy + dz * dz
    dist[first] = -1.0
    for s in range(1, m):
        nxt = 0
        best = -np.inf
        for i in range(n):
            if dist[i] > best:
                best = dist[i]
                nxt = i
        sel[s] = nxt
        for i in range(n):
            dx = points[i, 0] - points[nxt, 0]
            dy = points[i, 1] - points[nxt, 1]
            dz = points[i, 2] - points[nxt, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < dist[i]:
                dist[i] = d
        dist[nxt] = -1.0
    return sel


def fps(points, m, first):
    """Farthest-point sampling indices; max-min ties go to the lower index."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    return _fps_impl(points, m, first)


@njit(cache=True)
def _segment_sum_impl(values, seg, n_segments):
    out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
    for i in range(values.shape[0]):
        s = seg[i]
        for c in range(values.shape[1]):
            out[s, c] += values[i, c]
    return out


def segment_sum(values, seg, n_segments):
    """Sum rows of `values` into `n_segments` buckets given per-row ids."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    return _segment_sum_impl(values, seg, n_segments)
