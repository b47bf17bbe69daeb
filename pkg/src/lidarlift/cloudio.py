"""Point cloud file formats: KITTI velodyne .bin, ascii PLY, plain XYZ.

Text writers emit 17 significant digits so float64 coordinates survive a
write/read round trip exactly.
"""

import os

import numpy as np

from .geometry import PointCloud

_FLOAT_FMT = "%.17g"


def load_kitti_bin(path) -> PointCloud:
    """Read a packed little-endian float32 (x, y, z, intensity) scan.

    Intensity is kept as a single feature column.
    """
    size = os.path.getsize(path)
    if size % 16 != 0:
        raise ValueError(
            f"{path}: {size} bytes is not a whole number of 16-byte (x,y,z,i) records"
        )
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    if raw.shape[0] == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 1)))
    return PointCloud(raw[:, :3].astype(np.float64), raw[:, 3:4].astype(np.float64))


def save_kitti_bin(cloud: PointCloud, path):
    """Write a cloud as packed float32 (x, y, z, intensity) records.

    Coordinates are cast to float32; intensity comes from the first
    feature column and defaults to zero.
    """
    n = cloud.count
    rec = np.zeros((n, 4), dtype="<f4")
    rec[:, :3] = cloud.points.astype("<f4")
    if cloud.features is not None and cloud.features.shape[1] >= 1:
        rec[:, 3] = cloud.features[:, 0].astype("<f4")
    rec.tofile(path)


def save_xyz(cloud: PointCloud, path):
    """Whitespace-separated x y z lines (features are not stored)."""
    np.savetxt(path, cloud.points, fmt=_FLOAT_FMT)


def load_xyz(path) -> PointCloud:
    pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if pts.size == 0:
        return PointCloud(np.zeros((0, 3)))
    if pts.shape[1] < 3:
        raise ValueError(f"{path}: expected at least 3 columns, got {pts.shape[1]}")
    return PointCloud(pts[:, :3])


def save_ply(cloud: PointCloud, path):
    """Ascii PLY with double-precision vertex properties.

    Feature columns, when present, are written as properties named
    ``feat_0``, ``feat_1``, ...
    """
    n = cloud.count
    nfeat = 0 if cloud.features is None else cloud.features.shape[1]
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        for name in ("x", "y", "z"):
            fh.write(f"property double {name}\n")
        for j in range(nfeat):
            fh.write(f"property double feat_{j}\n")
        fh.write("end_header\n")
        data = cloud.points if nfeat == 0 else np.hstack([cloud.points, cloud.features])
        for row in data:
            fh.write(" ".join(_FLOAT_FMT % v for v in row) + "\n")


def load_ply(path) -> PointCloud:
    """Read the ascii PLY files produced by :func:`save_ply`."""
    with open(path, "r") as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n = None
        props = []
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated PLY header")
            line = line.strip()
            if line.startswith("comment"):
                continue
            if line.startswith("format"):
                if "ascii" not in line:
                    raise ValueError(f"{path}: only ascii PLY is supported")
                continue
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
                continue
            if line.startswith("element"):
                raise ValueError(f"{path}: unsupported element '{line}'")
            if line.startswith("property"):
                props.append(line.split()[-1])
                continue
            if line == "end_header":
                break
        if n is None:
            raise ValueError(f"{path}: PLY header has no vertex element")
        for name in ("x", "y", "z"):
            if name not in props:
                raise ValueError(f"{path}: PLY vertex lacks property '{name}'")
        rows = np.loadtxt(fh, dtype=np.float64, ndmin=2, max_rows=n) if n else np.zeros((0, len(props)))
        if rows.shape[0] != n:
            raise ValueError(f"{path}: expected {n} vertices, read {rows.shape[0]}")
    cols = {name: rows[:, j] for j, name in enumerate(props)}
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    feat_names = sorted((p for p in props if p.startswith("feat_")), key=lambda s: int(s[5:]))
    feats = np.column_stack([cols[f] for f in feat_names]) if feat_names else None
    return PointCloud(pts, feats)
