"""Noise-prediction network: autodiff, configuration, parameters, forward."""

from .config import DenoiserConfig
from .denoiser import (
    InteractionBundle,
    VoxelFeatureGrid,
    denoise,
    encode_condition,
    init_voxel_features,
    make_denoiser,
    match_features,
    null_condition,
    planar_unet,
    point_voxel_interact,
    predict_noise,
    time_embed,
    voxel_completion,
)
from .params import (
    audit_manifest,
    init_params,
    load_archive,
    param_count,
    save_archive,
    zero_grads,
)

__all__ = [
    "DenoiserConfig",
    "InteractionBundle",
    "VoxelFeatureGrid",
    "audit_manifest",
    "denoise",
    "encode_condition",
    "init_params",
    "init_voxel_features",
    "load_archive",
    "make_denoiser",
    "match_features",
    "null_condition",
    "param_count",
    "planar_unet",
    "point_voxel_interact",
    "predict_noise",
    "save_archive",
    "time_embed",
    "voxel_completion",
    "zero_grads",
]
