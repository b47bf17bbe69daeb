import numpy as np
import pytest

from lidarlift.geometry import PointCloud, SceneBounds, VoxelGridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_grid():
    """4x4x4 voxels over [0,4]^3: voxel size exactly 1 m."""
    return VoxelGridSpec((4, 4, 4), SceneBounds((0, 0, 0), (4, 4, 4)))


@pytest.fixture
def small_cloud(rng):
    return PointCloud(rng.uniform(0.0, 4.0, (64, 3)))


def brute_force_knn(queries, refs, k):
    """Exhaustive-scan oracle with the (distance, index) tie-break."""
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    out_i = np.empty((len(queries), k), dtype=np.int64)
    out_d = np.empty((len(queries), k), dtype=np.float64)
    for qi, q in enumerate(queries):
        d = np.sqrt(((refs - q) ** 2).sum(axis=1))
        order = sorted(range(len(refs)), key=lambda j: (d[j], j))[:k]
        out_i[qi] = order
        out_d[qi] = d[order]
    return out_i, out_d
