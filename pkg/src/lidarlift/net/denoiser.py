"""The noise predictor: voxel features, completion, planar refinement,
condition encoding, and point-voxel interaction.

All stages are differentiable through :mod:`lidarlift.net.autodiff`;
parameters are ``Var`` leaves, point coordinates enter as constants.
Stages on the voxel pathway (completion, planar U-Net) are compositions
of bias-free convolutions and an odd activation, so they map an all-zero
grid to an all-zero grid exactly.
"""

from dataclasses import dataclass

import numpy as np

from ..geometry import PointCloud, VoxelAssignment, voxel_centers, voxelize, knn, nearest_neighbor
from . import autodiff as ad
from .autodiff import Var
from .config import DenoiserConfig


@dataclass
class VoxelFeatureGrid:
    """Dense feature block over the grid plus the occupancy mask.

    ``features`` is an autodiff Var of shape (C, nx, ny, nz) so the grid
    can flow through training; ``array`` exposes the raw values.
    """

    features: Var
    occupancy: np.ndarray

    def __post_init__(self):
        if not isinstance(self.features, Var):
            self.features = Var(self.features)

    @property
    def array(self):
        return self.features.value


@dataclass
class InteractionBundle:
    """Value snapshots of the interaction features, for inspection/tests."""

    f_pos: np.ndarray       # (N, K, 10)
    f_group: np.ndarray     # (N, K, C)
    f_points: np.ndarray    # (N, C_p)
    f_match: np.ndarray     # (N, match_dim)
    f_hybr: np.ndarray      # (N, K, 10 + C + C_p + match_dim)
    weights: np.ndarray     # (N, K, C)
    neighbor_idx: np.ndarray  # (N, K) into the occupied-voxel list


def time_embed(t: int, dim: int) -> np.ndarray:
    """Sinusoidal step embedding; frequencies fall geometrically from 1 to 1e-4."""
    if t < 0:
        raise ValueError(f"step must be >= 0, got {t}")
    half = dim // 2
    if half > 1:
        freqs = 10.0 ** (-4.0 * np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    ang = freqs * float(t)
    emb = np.empty(dim)
    emb[0::2] = np.sin(ang)
    emb[1::2] = np.cos(ang)
    return emb


def _mlp2(x, params, name, activation=ad.leaky_relu):
    h = activation(ad.linear_nd(x, params[f"{name}.fc1.w"], params.get(f"{name}.fc1.b")))
    return ad.linear_nd(h, params[f"{name}.fc2.w"], params.get(f"{name}.fc2.b"))


def init_voxel_features(
    noisy: PointCloud,
    assign: VoxelAssignment,
    t_emb: np.ndarray,
    params,
    config: DenoiserConfig,
) -> VoxelFeatureGrid:
    """Point-wise transform of (offset, coords, t_emb), mean-pooled per voxel.

    Out-of-bounds points contribute nothing. Points are processed in a
    canonical (voxel, coordinate) order so the resulting grid is
    bit-identical under any permutation of the input cloud.
    """
    if assign.voxel_index.shape[0] != noisy.count:
        raise ValueError(
            f"assignment covers {assign.voxel_index.shape[0]} points, cloud has {noisy.count}"
        )
    nx, ny, nz = config.grid.resolution
    cv = config.voxel_channels
    n_vox = config.grid.num_voxels
    occupancy = np.zeros((nx, ny, nz), dtype=bool)
    if len(assign.occupied):
        occupancy[tuple(assign.occupied.T)] = True

    mask = assign.in_bounds
    if not mask.any():
        return VoxelFeatureGrid(Var(np.zeros((cv, nx, ny, nz))), occupancy)

    pts = noisy.points[mask]
    offs = assign.offset[mask]
    flat = config.grid.flat_index(assign.voxel_index[mask])
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], flat))
    pts, offs, flat = pts[order], offs[order], flat[order]

    feed = np.concatenate(
        [offs, pts, np.broadcast_to(t_emb, (len(pts), t_emb.size))], axis=1
    )
    per_point = _mlp2(Var(feed), params, "init")
    pooled = ad.segment_mean(per_point, flat, n_vox)  # (V, C_v)
    grid = ad.transpose(ad.reshape(pooled, (nx, ny, nz, cv)), (3, 0, 1, 2))
    return VoxelFeatureGrid(grid, occupancy)


def voxel_completion(grid: VoxelFeatureGrid, params, config: DenoiserConfig) -> VoxelFeatureGrid:
    """Propagate and refine voxel features via three multi-path residual units.

    Each unit runs three parallel dilated bias-free 3-D convolutions with
    per-path residual connections, concatenates the paths and projects
    back to C_v; the result is fused (added) with the incoming features.
    """
    x = grid.features
    if x.shape[0] != config.voxel_channels:
        raise ValueError(
            f"grid has {x.shape[0]} channels, config expects {config.voxel_channels}"
        )
    h = ad.scaled_tanh(ad.conv3d(x, params["completion.stem.w"], dilation=1))
    for u in range(3):
        paths = [
            ad.add(h, ad.scaled_tanh(ad.conv3d(h, params[f"completion.mprb{u}.conv{j}.w"], d)))
            for j, d in enumerate(config.mprb_dilations)
        ]
        h = ad.conv3d(ad.concat(paths, axis=0), params[f"completion.mprb{u}.proj.w"], 1)
    return VoxelFeatureGrid(ad.add(h, x), grid.occupancy)


def planar_unet(grid: VoxelFeatureGrid, params, config: DenoiserConfig) -> VoxelFeatureGrid:
    """Fold z into channels, refine over the (nx, ny) plane, unfold back.

    Encoder-decoder with skip connections at ``unet_depth`` scales plus an
    outer residual; bias-free throughout.
    """
    cv, nx, ny, nz = grid.features.shape
    x2d = ad.reshape(ad.transpose(grid.features, (0, 3, 1, 2)), (cv * nz, nx, ny))

    h = x2d
    skips = []
    for i in range(config.unet_depth):
        h = ad.scaled_tanh(ad.conv2d(h, params[f"unet.enc{i}.w"]))
        skips.append(h)
        h = ad.avgpool2(h)
    h = ad.scaled_tanh(ad.conv2d(h, params["unet.mid.w"]))
    for i in reversed(range(config.unet_depth)):
        h = ad.upsample2(h)
        h = ad.scaled_tanh(ad.conv2d(ad.concat([h, skips[i]], axis=0), params[f"unet.dec{i}.w"]))
    h = ad.conv2d(h, params["unet.out.w"])

    out = ad.add(x2d, h)
    unfolded = ad.transpose(ad.reshape(out, (cv, nz, nx, ny)), (0, 2, 3, 1))
    return VoxelFeatureGrid(unfolded, grid.occupancy)


def encode_condition(sparse: PointCloud, params, config: DenoiserConfig) -> Var:
    """Per-point residual blocks with increasing widths over the sparse cloud."""
    if sparse.count == 0:
        raise ValueError("condition cloud is empty; use null_condition instead")
    h = Var(sparse.points)
    for i in range(len(config.cond_channels)):
        inner = _mlp2(h, params, f"cond.block{i}")
        skip = ad.linear_nd(h, params[f"cond.block{i}.skip.w"])
        h = ad.leaky_relu(ad.add(inner, skip))
    return h


def null_condition(n_condition: int, params, config: DenoiserConfig) -> Var:
    """The all-zero feature block standing in for an absent condition."""
    return Var(np.zeros((n_condition, config.cond_channels[-1])))


def match_features(input_pts, sparse_pts, cond_feats: Var, params) -> Var:
    """Gather each input point's nearest sparse feature; refine to match_dim.

    The refinement is bias-free, so zero condition features produce an
    exactly zero match block.
    """
    sparse_pts = np.asarray(sparse_pts, dtype=np.float64).reshape(-1, 3)
    if sparse_pts.shape[0] == 0:
        raise ValueError("match_features needs a non-empty sparse cloud")
    if cond_feats.shape[0] != sparse_pts.shape[0]:
        raise ValueError(
            f"{cond_feats.shape[0]} feature rows for {sparse_pts.shape[0]} sparse points"
        )
    idx = nearest_neighbor(input_pts, sparse_pts)
    gathered = ad.gather_rows(cond_feats, idx)
    h = ad.leaky_relu(ad.linear(gathered, params["match.fc1.w"]))
    return ad.linear(h, params["match.fc2.w"])


def point_voxel_interact(
    input_pts,
    grid: VoxelFeatureGrid,
    occupied_indices,
    f_match: Var,
    params,
    config: DenoiserConfig,
    ablate_coordinates: bool = False,
    return_bundle: bool = False,
):
    """Per-point noise estimate from K neighboring occupied voxels.

    Positional features per neighbor are (voxel center, point, center
    minus point, squared distance); they are concatenated with the
    gathered voxel features, per-point coordinate features and the match
    block, turned into weights, and the weighted voxel features are
    averaged over K and mapped to a 3-channel noise vector.

    ``ablate_coordinates`` is a test hook that zeroes the absolute
    coordinate blocks (and the raw-coordinate input of the per-point
    features), leaving only translation-invariant inputs.
    """
    input_pts = np.asarray(input_pts, dtype=np.float64).reshape(-1, 3)
    occupied_indices = np.asarray(occupied_indices, dtype=np.int64).reshape(-1, 3)
    n = input_pts.shape[0]
    k = config.neighbors
    m = occupied_indices.shape[0]
    if m < k:
        raise ValueError(f"need at least K={k} occupied voxels, found {m}")

    centers = voxel_centers(config.grid, occupied_indices)
    nbr_idx, _ = knn(input_pts, centers, k)

    p_v = centers[nbr_idx]                                   # (N, K, 3)
    p_p = np.broadcast_to(input_pts[:, None, :], (n, k, 3)).copy()
    delta = p_v - p_p
    sqnorm = (delta * delta).sum(axis=2, keepdims=True)
    if ablate_coordinates:
        p_v = np.zeros_like(p_v)
        p_p = np.zeros_like(p_p)
    f_pos = Var(np.concatenate([p_v, p_p, delta, sqnorm], axis=2))

    flat_occ = config.grid.flat_index(occupied_indices)
    cv = config.voxel_channels
    table = ad.transpose(ad.reshape(grid.features, (cv, -1)), (1, 0))  # (V, C_v)
    occ_feats = ad.gather_rows(table, flat_occ)                        # (M, C_v)
    f_group = ad.gather_rows(occ_feats, nbr_idx)                       # (N, K, C_v)

    coord_feed = np.zeros_like(input_pts) if ablate_coordinates else input_pts
    f_points = _mlp2(Var(coord_feed), params, "points")                # (N, C_p)

    f_hybr = ad.concat(
        [
            f_pos,
            f_group,
            ad.broadcast_middle(f_points, k),
            ad.broadcast_middle(f_match, k),
        ],
        axis=2,
    )
    w_hidden = ad.leaky_relu(
        ad.linear_nd(f_hybr, params["interact.w1.w"], params["interact.w1.b"])
    )
    weights = ad.linear_nd(w_hidden, params["interact.w2.w"], params["interact.w2.b"])

    agg = ad.mean(ad.mul(weights, f_group), axis=1)                    # (N, C_v)
    head = ad.leaky_relu(ad.linear(agg, params["head.fc1.w"], params["head.fc1.b"]))
    eps_hat = ad.linear(head, params["head.fc2.w"], params["head.fc2.b"])

    if return_bundle:
        bundle = InteractionBundle(
            f_pos=f_pos.value,
            f_group=f_group.value,
            f_points=f_points.value,
            f_match=f_match.value,
            f_hybr=f_hybr.value,
            weights=weights.value,
            neighbor_idx=nbr_idx,
        )
        return eps_hat, bundle
    return eps_hat


def denoise(
    noisy: PointCloud,
    condition: PointCloud | None,
    t: int,
    params,
    config: DenoiserConfig,
) -> Var:
    """Full noise prediction for every input point.

    ``condition=None`` runs the unconditional branch: the match block is
    the zero block, exactly what the null condition token produces.
    """
    config.check_capacity(noisy.count)
    assign = voxelize(noisy, config.grid)
    t_emb = time_embed(t, config.time_embed_dim)
    grid = init_voxel_features(noisy, assign, t_emb, params, config)
    grid = voxel_completion(grid, params, config)
    grid = planar_unet(grid, params, config)

    if condition is None or condition.count == 0:
        f_match = Var(np.zeros((noisy.count, config.match_dim)))
    else:
        cond_feats = encode_condition(condition, params, config)
        f_match = match_features(noisy.points, condition.points, cond_feats, params)

    return point_voxel_interact(
        noisy.points, grid, assign.occupied, f_match, params, config
    )


def predict_noise(noisy, condition, t, params, config) -> np.ndarray:
    """Convenience wrapper returning the detached (N, 3) noise array."""
    return denoise(noisy, condition, t, params, config).value


def make_denoiser(params, config: DenoiserConfig):
    """Adapt trained parameters to the sampler's callable protocol."""

    def fn(points, condition, t):
        return predict_noise(PointCloud(points), condition, t, params, config)

    return fn
