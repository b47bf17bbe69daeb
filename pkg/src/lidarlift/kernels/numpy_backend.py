"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path behind ``LIDARLIFT_NUMBA=0`` and the ground
truth the numba backend is tested against. Distance work is chunked so
memory stays bounded on large clouds.
"""

import numpy as np

# Cap pairwise-distance scratch around 32 MB of float64.
_CHUNK_BUDGET = 4_000_000


def _sqdist_block(a, b):
    # (na, nb) squared distances; summation order (x+y)+z matches the
    # numba backend's scalar accumulation bit for bit.
    d = a[:, None, :] - b[None, :, :]
    return (d * d).sum(axis=-1)


def knn(queries, refs, k):
    """k nearest references per query, ascending distance, ties to lower index.

    Returns (indices (N,k) int64, squared distances (N,k) float64).
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    n, m = len(queries), len(refs)
    idx = np.empty((n, k), dtype=np.int64)
    d2 = np.empty((n, k), dtype=np.float64)
    step = max(1, _CHUNK_BUDGET // max(m, 1))
    for lo in range(0, n, step):
        block = _sqdist_block(queries[lo : lo + step], refs)
        # stable sort keeps equal distances in index order, which is
        # exactly the documented tie-break
        order = np.argsort(block, axis=1, kind="stable")[:, :k]
        idx[lo : lo + step] = order
        d2[lo : lo + step] = np.take_along_axis(block, order, axis=1)
    return idx, d2


def nearest_sqdist(a, b):
    """Squared distance from each point of `a` to its nearest point in `b`."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty(len(a), dtype=np.float64)
    step = max(1, _CHUNK_BUDGET // max(len(b), 1))
    for lo in range(0, len(a), step):
        out[lo : lo + step] = _sqdist_block(a[lo : lo + step], b).min(axis=1)
    return out


def fps(points, m, first):
    """Farthest-point sampling indices; max-min ties go to the lower index."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    sel = np.empty(m, dtype=np.int64)
    sel[0] = first
    # squared min-distance to the selected set; selected points parked at -1
    dist = _sqdist_block(points, points[first : first + 1])[:, 0]
    dist[first] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(dist))
        sel[i] = nxt
        d_new = _sqdist_block(points, points[nxt : nxt + 1])[:, 0]
        np.minimum(dist, d_new, out=dist)
        dist[nxt] = -1.0
    return sel


def segment_sum(values, seg, n_segments):
    """Sum rows of `values` into `n_segments` buckets given per-row ids."""
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
    np.add.at(out, seg, values)
    return out
