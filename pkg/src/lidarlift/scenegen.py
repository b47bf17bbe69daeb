"""Procedural scene clouds and (condition, input) training pairs.

A scene is a ground plane plus boxes and poles resting on it, sampled
uniformly on their surfaces. The dense scene cloud stands in for a map
merged from many aligned sweeps; training pairs are independent uniform
subsamples of it. Everything is a pure function of (spec, seed).
"""

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import flatconfig
from .cloudio import load_ply, save_ply
from .geometry import PointCloud


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of the procedural generator; all ranges inclusive.

    ``object_scatter`` is the half-extent of the square object centers
    are drawn from; it defaults to the ground patch size, and setting it
    larger places objects beyond the sampled ground plane (they still
    rest at ground_z).
    """

    seed: int = 0
    ground_half_extent: float = 20.0
    ground_z: float = 0.0
    box_count: tuple = (4, 10)
    box_size: tuple = (0.5, 3.0)
    pole_count: tuple = (4, 10)
    pole_radius: tuple = (0.05, 0.25)
    pole_height: tuple = (1.0, 4.0)
    density: float = 6.0
    object_scatter: float | None = None

    def __post_init__(self):
        if self.density <= 0:
            raise ValueError(f"density must be > 0, got {self.density}")
        if self.ground_half_extent <= 0:
            raise ValueError("ground_half_extent must be > 0")
        if self.object_scatter is not None and self.object_scatter <= 0:
            raise ValueError("object_scatter must be > 0 when given")
        for name in ("box_count", "box_size", "pole_count", "pole_radius", "pole_height"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} range ({lo}, {hi}) is invalid")
        for name in ("box_size", "pole_radius", "pole_height"):
            if getattr(self, name)[0] <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def scatter(self) -> float:
        return self.ground_half_extent if self.object_scatter is None else self.object_scatter


@dataclass(frozen=True)
class TrainingPair:
    """A guiding sparse cloud and its R-times-denser noisy-model input."""

    condition: PointCloud
    input: PointCloud
    rate: int
    seed: int
    scene_seed: int | None = None

    def __post_init__(self):
        if self.rate < 1:
            raise ValueError(f"rate must be >= 1, got {self.rate}")
        if self.input.count != self.rate * self.condition.count:
            raise ValueError(
                f"input must hold rate*condition points: "
                f"{self.input.count} != {self.rate} * {self.condition.count}"
            )


def sample_box_surface(rng, center_xy, size, ground_z, density):
    """Uniform points on all six faces of an axis-aligned box on the ground.

    Face point counts are Poisson draws with mean face_area * density, so
    the total count concentrates around the full surface area times the
    density.
    """
    sx, sy, sz = size
    cx, cy = center_xy
    x0, x1 = cx - sx / 2, cx + sx / 2
    y0, y1 = cy - sy / 2, cy + sy / 2
    z0, z1 = ground_z, ground_z + sz
    pts = []
    # (area, fixed axis, fixed value, free axis ranges)
    faces = [
        (sx * sy, 2, z0, (x0, x1), (y0, y1)),
        (sx * sy, 2, z1, (x0, x1), (y0, y1)),
        (sy * sz, 0, x0, (y0, y1), (z0, z1)),
        (sy * sz, 0, x1, (y0, y1), (z0, z1)),
        (sx * sz, 1, y0, (x0, x1), (z0, z1)),
        (sx * sz, 1, y1, (x0, x1), (z0, z1)),
    ]
    for area, axis, value, (a0, a1), (b0, b1) in faces:
        n = rng.poisson(area * density)
        if n == 0:
            continue
        u = rng.uniform(a0, a1, n)
        v = rng.uniform(b0, b1, n)
        face = np.empty((n, 3))
        face[:, axis] = value
        free = [i for i in range(3) if i != axis]
        face[:, free[0]] = u
        face[:, free[1]] = v
        pts.append(face)
    return np.concatenate(pts, axis=0) if pts else np.zeros((0, 3))


def sample_pole_surface(rng, center_xy, radius, height, ground_z, density):
    """Uniform points on the lateral surface of a vertical cylinder."""
    area = 2.0 * np.pi * radius * height
    n = rng.poisson(area * density)
    if n == 0:
        return np.zeros((0, 3))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(ground_z, ground_z + height, n)
    return np.column_stack(
        [center_xy[0] + radius * np.cos(theta), center_xy[1] + radius * np.sin(theta), z]
    )


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Sample a dense scene cloud; deterministic under spec.seed."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    h = spec.ground_half_extent
    parts = []

    ground_n = rng.poisson((2 * h) ** 2 * spec.density)
    ground = np.column_stack(
        [
            rng.uniform(-h, h, ground_n),
            rng.uniform(-h, h, ground_n),
            np.full(ground_n, spec.ground_z),
        ]
    )
    parts.append(ground)

    scatter = spec.scatter
    n_boxes = int(rng.integers(spec.box_count[0], spec.box_count[1] + 1))
    for _ in range(n_boxes):
        size = rng.uniform(spec.box_size[0], spec.box_size[1], 3)
        center = rng.uniform(-scatter, scatter, 2)
        parts.append(sample_box_surface(rng, center, size, spec.ground_z, spec.density))

    n_poles = int(rng.integers(spec.pole_count[0], spec.pole_count[1] + 1))
    for _ in range(n_poles):
        radius = rng.uniform(*spec.pole_radius)
        height = rng.uniform(*spec.pole_height)
        center = rng.uniform(-scatter, scatter, 2)
        parts.append(
            sample_pole_surface(rng, center, radius, height, spec.ground_z, spec.density)
        )

    return PointCloud(np.concatenate(parts, axis=0))


def make_training_pair(dense: PointCloud, n_condition: int, rate: int, seed, scene_seed=None):
    """Draw a (condition, input) pair from one dense scene.

    The two draws are independent uniform subsamples without replacement;
    the condition is deliberately not forced to be a subset of the input,
    mirroring two distinct acquisitions of the same scene.
    """
    need = rate * n_condition
    if dense.count < need:
        raise ValueError(
            f"dense cloud has {dense.count} points, need rate*n_condition = "
            f"{need} ({need - dense.count} short)"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    cond_idx = rng.choice(dense.count, size=n_condition, replace=False)
    in_idx = rng.choice(dense.count, size=need, replace=False)
    return TrainingPair(
        condition=PointCloud(dense.points[cond_idx]),
        input=PointCloud(dense.points[in_idx]),
        rate=rate,
        seed=seed,
        scene_seed=scene_seed,
    )


def simulate_sweep(dense: PointCloud, sensor_origin, beams: int, azimuth_steps: int):
    """Emulate single-scan ring sparsity: one return per (beam, azimuth) bin.

    Within a bin the surviving point is the one angularly closest to the
    bin-center ray; range, then index, break ties. Elevation bins span the
    data's own elevation range.
    """
    if beams < 1 or azimuth_steps < 1:
        raise ValueError("beams and azimuth_steps must be >= 1")
    if dense.count == 0:
        return PointCloud(np.zeros((0, 3)))
    origin = np.asarray(sensor_origin, dtype=np.float64)
    rel = dense.points - origin
    rng_dist = np.linalg.norm(rel, axis=1)
    keep = rng_dist > 0
    rel, rng_dist = rel[keep], rng_dist[keep]
    pts = dense.points[keep]
    if len(pts) == 0:
        return PointCloud(np.zeros((0, 3)))

    azimuth = np.arctan2(rel[:, 1], rel[:, 0])
    elevation = np.arctan2(rel[:, 2], np.hypot(rel[:, 0], rel[:, 1]))
    az_bin = np.clip(
        np.floor((azimuth + np.pi) / (2 * np.pi) * azimuth_steps).astype(np.int64),
        0,
        azimuth_steps - 1,
    )
    e_lo, e_hi = elevation.min(), elevation.max()
    span = e_hi - e_lo
    if span > 0:
        el_bin = np.clip(
            np.floor((elevation - e_lo) / span * beams).astype(np.int64), 0, beams - 1
        )
    else:
        el_bin = np.zeros(len(pts), dtype=np.int64)
    bin_id = el_bin * azimuth_steps + az_bin

    az_center = -np.pi + (az_bin + 0.5) * 2 * np.pi / azimuth_steps
    el_center = e_lo + (el_bin + 0.5) * (span / beams if span > 0 else 0.0)
    ray = np.column_stack(
        [
            np.cos(el_center) * np.cos(az_center),
            np.cos(el_center) * np.sin(az_center),
            np.sin(el_center),
        ]
    )
    alignment = (rel / rng_dist[:, None] * ray).sum(axis=1)

    order = np.lexsort((np.arange(len(pts)), rng_dist, -alignment, bin_id))
    _, first = np.unique(bin_id[order], return_index=True)
    chosen = np.sort(order[first])
    return PointCloud(pts[chosen])


def perturb_gaussian(cloud: PointCloud, tau: float, seed) -> PointCloud:
    """Add iid N(0, tau^2) displacement to every coordinate."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if tau == 0:
        return PointCloud(cloud.points.copy(), cloud.features)
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = tau * rng.standard_normal(cloud.points.shape)
    return PointCloud(cloud.points + noise, cloud.features)


# -- scene spec config round trip -------------------------------------------

def scene_spec_to_config(spec: SceneSpec) -> str:
    pairs = {}
    for name, value in asdict(spec).items():
        key = f"scene.{name}"
        if value is None:
            continue
        if isinstance(value, tuple):
            pairs[key] = " ".join(repr(v) for v in value)
        else:
            pairs[key] = repr(value)
    return flatconfig.format_config(pairs)


def scene_spec_from_config(text: str) -> SceneSpec:
    raw = flatconfig.parse_config_text(text)
    kwargs = {}
    for key, value in raw.items():
        if not key.startswith("scene."):
            raise ValueError(f"unexpected config key {key!r} in a scene spec")
        name = key[len("scene.") :]
        if name == "seed":
            kwargs[name] = flatconfig.as_int(value, key)
        elif name in ("ground_half_extent", "ground_z", "density", "object_scatter"):
            kwargs[name] = flatconfig.as_float(value, key)
        elif name in ("box_count", "pole_count"):
            kwargs[name] = flatconfig.as_ints(value, key, 2)
        elif name in ("box_size", "pole_radius", "pole_height"):
            kwargs[name] = flatconfig.as_floats(value, key, 2)
        else:
            raise ValueError(f"unknown scene spec key {key!r}")
    return SceneSpec(**kwargs)


# -- dataset directories -----------------------------------------------------

def write_dataset(out_dir, pairs, scene_spec=None, meta=None):
    """Write pairs as PLY files plus a JSON manifest of seeds and parameters."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, pair in enumerate(pairs):
        cond_name = f"pair_{i:04d}_condition.ply"
        in_name = f"pair_{i:04d}_input.ply"
        save_ply(pair.condition, os.path.join(out_dir, cond_name))
        save_ply(pair.input, os.path.join(out_dir, in_name))
        entries.append(
            {
                "condition": cond_name,
                "input": in_name,
                "rate": pair.rate,
                "seed": int(pair.seed),
                "scene_seed": None if pair.scene_seed is None else int(pair.scene_seed),
                "n_condition": pair.condition.count,
            }
        )
    manifest = {
        "pairs": entries,
        "scene_spec": None if scene_spec is None else asdict(scene_spec),
        "meta": meta or {},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(path):
    """Load a dataset directory back into TrainingPair objects."""
    with open(os.path.join(path, "manifest.json"), "r") as fh:
        manifest = json.load(fh)
    pairs = []
    for entry in manifest["pairs"]:
        pairs.append(
            TrainingPair(
                condition=load_ply(os.path.join(path, entry["condition"])),
                input=load_ply(os.path.join(path, entry["input"])),
                rate=entry["rate"],
                seed=entry["seed"],
                scene_seed=entry.get("scene_seed"),
            )
        )
    return pairs, manifest
