"""Scene-level LiDAR point cloud upsampling via conditional denoising diffusion.

A sparse scan guides the generation: its points are replicated R times,
displaced by Gaussian noise, and iteratively denoised by a trained
noise predictor that fuses per-point, voxel, and condition features.
"""

__version__ = "0.1.0"

from .geometry import (
    PointCloud,
    SceneBounds,
    VoxelAssignment,
    VoxelGridSpec,
    fps,
    knn,
    nearest_neighbor,
    voxel_centers,
    voxelize,
)
from .diffusion import (
    NoiseSchedule,
    SamplerConfig,
    cfg_combine,
    forward_noise,
    linear_schedule,
    reverse_step,
    sample,
    timestep_ladder,
)
from .metrics import MetricReport, RcdConfig, chamfer, evaluate, fscore, rcd
from .net import DenoiserConfig, denoise, init_params, make_denoiser, predict_noise
from .scenegen import (
    SceneSpec,
    TrainingPair,
    generate_scene,
    make_training_pair,
    perturb_gaussian,
    simulate_sweep,
)
from .training import LossBreakdown, TrainConfig, loss, smooth_l1, train, train_step
