"""Point cloud containers, voxel grids, neighbor search and sampling.

Coordinates are metric (meters) float64 throughout. All operations are
pure: nothing here mutates its inputs or keeps global state.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

# Desk-scale scene box: 128x128x16 cells over +-25.6 m x +-3.2 m gives
# cubic 0.4 m voxels.
DEFAULT_MIN_CORNER = (-25.6, -25.6, -3.2)
DEFAULT_MAX_CORNER = (25.6, 25.6, 3.2)
DEFAULT_RESOLUTION = (128, 128, 16)


@dataclass(frozen=True)
class PointCloud:
    """N points in meters with optional per-point feature rows."""

    points: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain NaN or Inf")
        object.__setattr__(self, "points", pts)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"features must have one row per point: {feats.shape[0]} rows "
                    f"for {pts.shape[0]} points"
                )
            object.__setattr__(self, "features", feats)

    @property
    def count(self):
        return self.points.shape[0]

    def translated(self, offset):
        off = np.asarray(offset, dtype=np.float64)
        return PointCloud(self.points + off, self.features)


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned metric box; min strictly below max on every axis."""

    min_corner: tuple
    max_corner: tuple

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("corners must be 3-vectors")
        if not np.all(lo < hi):
            raise ValueError(f"min_corner {lo} must be < max_corner {hi} per axis")
        object.__setattr__(self, "min_corner", tuple(lo))
        object.__setattr__(self, "max_corner", tuple(hi))

    @property
    def lo(self):
        return np.array(self.min_corner)

    @property
    def hi(self):
        return np.array(self.max_corner)


@dataclass(frozen=True)
class VoxelGridSpec:
    """Regular voxel grid over a scene box."""

    resolution: tuple = DEFAULT_RESOLUTION
    bounds: SceneBounds = field(
        default_factory=lambda: SceneBounds(DEFAULT_MIN_CORNER, DEFAULT_MAX_CORNER)
    )

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or any(r <= 0 for r in res):
            raise ValueError(f"resolution must be 3 positive ints, got {self.resolution}")
        object.__setattr__(self, "resolution", res)

    @property
    def voxel_size(self):
        return (self.bounds.hi - self.bounds.lo) / np.array(self.resolution, dtype=np.float64)

    @property
    def num_voxels(self):
        nx, ny, nz = self.resolution
        return nx * ny * nz

    def flat_index(self, voxel_index):
        """Row-major flattening of integer voxel index triples."""
        nx, ny, nz = self.resolution
        v = np.asarray(voxel_index)
        return (v[..., 0] * ny + v[..., 1]) * nz + v[..., 2]


@dataclass(frozen=True)
class VoxelAssignment:
    """Per-point voxel membership produced by :func:`voxelize`.

    ``voxel_index`` holds the floor-division cell of every point (also for
    out-of-bounds points, so nothing is silently dropped); ``in_bounds``
    flags the points that actually fall inside the grid; ``offset`` is
    point minus voxel center; ``occupied`` lists the distinct voxel index
    triples of in-bounds points in lexicographic order.
    """

    voxel_index: np.ndarray
    offset: np.ndarray
    in_bounds: np.ndarray
    occupied: np.ndarray


def voxelize(cloud: PointCloud, spec: VoxelGridSpec) -> VoxelAssignment:
    """Assign every point to its voxel; out-of-bounds points are flagged.

    Points exactly on the max corner belong to the last voxel along that
    axis, so the closed bounds box is fully covered.
    """
    pts = cloud.points
    lo, hi = spec.bounds.lo, spec.bounds.hi
    res = np.array(spec.resolution, dtype=np.int64)
    vs = spec.voxel_size
    if pts.shape[0] == 0:
        return VoxelAssignment(
            voxel_index=np.zeros((0, 3), dtype=np.int64),
            offset=np.zeros((0, 3), dtype=np.float64),
            in_bounds=np.zeros(0, dtype=bool),
            occupied=np.zeros((0, 3), dtype=np.int64),
        )
    idx = np.floor((pts - lo) / vs).astype(np.int64)
    in_bounds = np.all((pts >= lo) & (pts <= hi), axis=1)
    # max-corner points land in the last cell
    idx_clamped = np.where(in_bounds[:, None], np.minimum(idx, res - 1), idx)
    centers = lo + (idx_clamped + 0.5) * vs
    offset = pts - centers
    occ = np.unique(idx_clamped[in_bounds], axis=0) if in_bounds.any() else np.zeros((0, 3), dtype=np.int64)
    return VoxelAssignment(idx_clamped, offset, in_bounds, occ)


def voxel_centers(spec: VoxelGridSpec, indices) -> np.ndarray:
    """World coordinates of voxel centers for integer index triples."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
    if idx.shape[0] == 0:
        return np.zeros((0, 3), dtype=np.float64)
    res = np.array(spec.resolution, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= res):
        bad = idx[np.any((idx < 0) | (idx >= res), axis=1)][0]
        raise ValueError(
            f"voxel index {tuple(int(v) for v in bad)} outside resolution {spec.resolution}"
        )
    return spec.bounds.lo + (idx + 0.5) * spec.voxel_size


def knn(queries, references, k: int):
    """k nearest references per query.

    Returns ``(indices (N,k), distances (N,k))`` with Euclidean distances
    sorted ascending; exact ties go to the lower reference index.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    references = np.asarray(references, dtype=np.float64).reshape(-1, 3)
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if references.shape[0] < k:
        raise ValueError(f"need at least k={k} references, got {references.shape[0]}")
    idx, d2 = kernels.knn(queries, references, k)
    return idx, np.sqrt(d2)


def nearest_neighbor(queries, references):
    """Index of the nearest reference per query (knn with k=1)."""
    references = np.asarray(references, dtype=np.float64).reshape(-1, 3)
    if references.shape[0] == 0:
        raise ValueError("nearest_neighbor needs a non-empty reference set")
    idx, _ = knn(queries, references, 1)
    return idx[:, 0]


def fps(cloud: PointCloud, m: int, seed) -> np.ndarray:
    """Farthest-point sampling of m point indices.

    The first pick is a seeded uniform draw; every following pick
    maximizes the minimum distance to the already-selected set.
    """
    n = cloud.count
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample m={m} points from a cloud of {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    first = int(rng.integers(n))
    return kernels.fps(cloud.points, m, first)
