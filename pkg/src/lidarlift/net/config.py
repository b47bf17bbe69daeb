"""Noise-predictor configuration and the structural layer manifest."""

import warnings
from dataclasses import dataclass, field

from ..geometry import VoxelGridSpec

# manifest paths
PATH_INIT = "init"
PATH_COMPLETION = "completion"
PATH_UNET = "unet"
PATH_CONDITION = "condition"
PATH_MATCH = "match"
PATH_INTERACT = "interact"
PATH_HEAD = "head"


@dataclass(frozen=True)
class DenoiserConfig:
    """Widths, kernels and neighbor counts of the noise predictor.

    The completion path runs three multi-path residual units whose three
    parallel 3-D convolutions get their kernel sizes and dilations from
    ``mprb_kernels`` / ``mprb_dilations``. ``neighbors`` is the K of the
    point-voxel interaction.
    """

    grid: VoxelGridSpec = field(default_factory=VoxelGridSpec)
    voxel_channels: int = 16
    time_embed_dim: int = 64
    stem_kernel: int = 3
    mprb_kernels: tuple = (3, 3, 3)
    mprb_dilations: tuple = (1, 2, 3)
    unet_depth: int = 2
    unet_width: int = 32
    cond_channels: tuple = (16, 32, 64, 128)
    match_dim: int = 64
    point_channels: int = 16
    interact_hidden: int = 32
    head_hidden: int = 32
    neighbors: int = 16
    null_condition_mode: str = "zeros"

    def __post_init__(self):
        if self.neighbors < 1:
            raise ValueError(f"neighbors must be >= 1, got {self.neighbors}")
        if len(self.mprb_kernels) != 3 or len(self.mprb_dilations) != 3:
            raise ValueError("mprb_kernels and mprb_dilations must list 3 entries")
        for k in (self.stem_kernel, *self.mprb_kernels):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"convolution kernels must be odd and >= 1, got {k}")
        if any(d < 1 for d in self.mprb_dilations):
            raise ValueError("dilations must be >= 1")
        if len(self.cond_channels) != 4 or any(
            a >= b for a, b in zip(self.cond_channels, self.cond_channels[1:])
        ):
            raise ValueError(
                f"cond_channels must be 4 strictly increasing widths, got {self.cond_channels}"
            )
        if self.unet_depth < 1:
            raise ValueError("unet_depth must be >= 1")
        nx, ny, _ = self.grid.resolution
        scale = 2**self.unet_depth
        if nx % scale or ny % scale:
            raise ValueError(
                f"grid plane {nx}x{ny} is not divisible by 2^unet_depth={scale}"
            )
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even and >= 2")
        if self.null_condition_mode != "zeros":
            raise ValueError(f"unknown null_condition_mode {self.null_condition_mode!r}")

    @property
    def hybrid_dim(self):
        # 10 positional entries + grouped voxel features + per-point and match blocks
        return 10 + self.voxel_channels + self.point_channels + self.match_dim

    def check_capacity(self, n_points: int):
        """Warn when the grid has fewer voxels than input points."""
        if self.grid.num_voxels < n_points:
            warnings.warn(
                f"voxel grid capacity {self.grid.num_voxels} is below the input "
                f"point count {n_points}; per-point context will be crowded",
                stacklevel=3,
            )
