"""Evaluation suite: Chamfer distance, region-aware Chamfer, F-score.

Units differ on purpose: CD averages squared nearest distances (m^2)
while the region-aware variant averages unsquared distances (m); the
report labels both. All randomness (region seeding, group split) comes
from the RcdConfig seed and is recorded in the report.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .flatconfig import sub_seed
from .geometry import PointCloud, fps, knn


@dataclass(frozen=True)
class RcdConfig:
    """Region bookkeeping: group count, targets per group, recon/match split."""

    groups: int = 64
    targets_per_group: int = 32
    recon_groups: int = 20
    match_groups: int = 44
    seed: int = 0

    def __post_init__(self):
        if self.groups < 1 or self.targets_per_group < 1:
            raise ValueError("groups and targets_per_group must be >= 1")
        if self.recon_groups + self.match_groups != self.groups:
            raise ValueError(
                f"recon_groups + match_groups must equal groups: "
                f"{self.recon_groups} + {self.match_groups} != {self.groups}"
            )


@dataclass(frozen=True)
class MetricReport:
    """All metric values plus the provenance needed to reproduce them."""

    cd: float
    rcd: float
    recon_rcd: float
    match_rcd: float
    fscore: float
    cd_units: str = "m^2"
    rcd_units: str = "m"
    fscore_threshold: float = 0.2
    rcd_seed: int = 0
    rcd_groups: int = 64
    rcd_targets_per_group: int = 32
    rcd_recon_groups: int = 20
    rcd_match_groups: int = 44

    def __post_init__(self):
        for name in ("cd", "rcd", "recon_rcd", "match_rcd", "fscore"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.fscore > 1.0:
            raise ValueError("fscore cannot exceed 1")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def chamfer(p: PointCloud, q: PointCloud) -> float:
    """Bidirectional mean squared nearest-neighbor distance (m^2)."""
    if p.count == 0 or q.count == 0:
        raise ValueError("chamfer distance needs two non-empty clouds")
    return float(
        kernels.nearest_sqdist(p.points, q.points).mean()
        + kernels.nearest_sqdist(q.points, p.points).mean()
    )


def rcd(p: PointCloud, q: PointCloud, cfg: RcdConfig):
    """Region-aware Chamfer distance and its recon/match split.

    Seeded farthest-point sampling over the target cloud picks the group
    centers. Each center seeds a local region in both clouds: its k
    nearest target points and its k nearest predicted points (capped by
    the cloud sizes). Per region the two unsquared nearest-distance means
    are added; the RCD is the mean over regions, and the recon/match
    values average a seeded random partition of the regions. Identical
    clouds select identical regions on both sides, so the value is
    exactly zero.
    """
    if p.count == 0 or q.count == 0:
        raise ValueError("rcd needs two non-empty clouds")
    if cfg.groups > q.count:
        raise ValueError(f"cannot seed {cfg.groups} groups from {q.count} target points")

    center_idx = fps(q, cfg.groups, seed=cfg.seed)
    centers = q.points[center_idx]
    q_regions, _ = knn(centers, q.points, min(cfg.targets_per_group, q.count))
    p_regions, _ = knn(centers, p.points, min(cfg.targets_per_group, p.count))

    values = np.empty(cfg.groups)
    for g in range(cfg.groups):
        members = p.points[p_regions[g]]
        targets = q.points[q_regions[g]]
        to_targets = np.sqrt(kernels.nearest_sqdist(members, targets)).mean()
        from_targets = np.sqrt(kernels.nearest_sqdist(targets, members)).mean()
        values[g] = to_targets + from_targets

    split_rng = np.random.Generator(np.random.PCG64(sub_seed(cfg.seed, "recon-match-split")))
    perm = split_rng.permutation(cfg.groups)
    recon_ids = np.zeros(cfg.groups, dtype=bool)
    recon_ids[perm[: cfg.recon_groups]] = True

    return (
        float(values.mean()),
        float(values[recon_ids].mean()),
        float(values[~recon_ids].mean()),
    )


def fscore(p: PointCloud, q: PointCloud, threshold: float) -> float:
    """Harmonic mean of distance-thresholded precision and recall."""
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    if p.count == 0 or q.count == 0:
        raise ValueError("fscore needs two non-empty clouds")
    thr2 = threshold * threshold
    precision = float((kernels.nearest_sqdist(p.points, q.points) <= thr2).mean())
    recall = float((kernels.nearest_sqdist(q.points, p.points) <= thr2).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate(p: PointCloud, q: PointCloud, rcd_cfg: RcdConfig, f_threshold: float) -> MetricReport:
    """Bundle CD, RCD variants and F-score with their provenance."""
    rcd_all, recon, match = rcd(p, q, rcd_cfg)
    return MetricReport(
        cd=chamfer(p, q),
        rcd=rcd_all,
        recon_rcd=recon,
        match_rcd=match,
        fscore=fscore(p, q, f_threshold),
        fscore_threshold=f_threshold,
        rcd_seed=rcd_cfg.seed,
        rcd_groups=rcd_cfg.groups,
        rcd_targets_per_group=rcd_cfg.targets_per_group,
        rcd_recon_groups=rcd_cfg.recon_groups,
        rcd_match_groups=rcd_cfg.match_groups,
    )
