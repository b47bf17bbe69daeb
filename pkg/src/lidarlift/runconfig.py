"""The CLI's aggregated run configuration.

One flat key-value file configures every stage; keys are dotted
(``train.lr``), values are scalars or whitespace-separated tuples.
Unknown keys and malformed values fail loudly with the offending key in
the message; cross-field checks run after assembly.
"""

from dataclasses import dataclass, field, replace

from . import flatconfig as fc
from .geometry import SceneBounds, VoxelGridSpec, DEFAULT_MIN_CORNER, DEFAULT_MAX_CORNER, DEFAULT_RESOLUTION
from .metrics import RcdConfig
from .net.config import DenoiserConfig
from .scenegen import SceneSpec
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    grid_resolution: tuple = DEFAULT_RESOLUTION
    grid_min_corner: tuple = DEFAULT_MIN_CORNER
    grid_max_corner: tuple = DEFAULT_MAX_CORNER
    scene: SceneSpec = field(default_factory=SceneSpec)
    synth_scenes: int = 4
    synth_n_condition: int = 1024
    synth_rate: int = 4
    diffusion_T: int = 1000
    diffusion_beta_0: float = 3.5e-5
    diffusion_beta_T: float = 7e-3
    denoiser_voxel_channels: int = 16
    denoiser_time_embed_dim: int = 64
    denoiser_stem_kernel: int = 3
    denoiser_mprb_kernels: tuple = (3, 3, 3)
    denoiser_mprb_dilations: tuple = (1, 2, 3)
    denoiser_unet_depth: int = 2
    denoiser_unet_width: int = 32
    denoiser_cond_channels: tuple = (16, 32, 64, 128)
    denoiser_match_dim: int = 64
    denoiser_point_channels: int = 16
    denoiser_interact_hidden: int = 32
    denoiser_head_hidden: int = 32
    denoiser_neighbors: int = 16
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler_steps: int = 50
    sampler_guidance_scale: float | None = None  # deliberately no default
    sampler_variant: str = "local-ddim"
    rcd: RcdConfig = field(default_factory=RcdConfig)
    fscore_threshold: float = 0.2

    def grid_spec(self) -> VoxelGridSpec:
        return VoxelGridSpec(
            self.grid_resolution, SceneBounds(self.grid_min_corner, self.grid_max_corner)
        )

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            grid=self.grid_spec(),
            voxel_channels=self.denoiser_voxel_channels,
            time_embed_dim=self.denoiser_time_embed_dim,
            stem_kernel=self.denoiser_stem_kernel,
            mprb_kernels=self.denoiser_mprb_kernels,
            mprb_dilations=self.denoiser_mprb_dilations,
            unet_depth=self.denoiser_unet_depth,
            unet_width=self.denoiser_unet_width,
            cond_channels=self.denoiser_cond_channels,
            match_dim=self.denoiser_match_dim,
            point_channels=self.denoiser_point_channels,
            interact_hidden=self.denoiser_interact_hidden,
            head_hidden=self.denoiser_head_hidden,
            neighbors=self.denoiser_neighbors,
        )

    def schedule_args(self):
        return self.diffusion_T, self.diffusion_beta_0, self.diffusion_beta_T

    def validate(self):
        """Cross-field checks; raises ValueError naming the offending keys."""
        self.grid_spec()
        self.denoiser_config()
        if not (0 < self.diffusion_beta_0 <= self.diffusion_beta_T < 1):
            raise ValueError(
                "diffusion.beta_0 and diffusion.beta_T must satisfy 0 < beta_0 <= beta_T < 1"
            )
        if self.sampler_steps > self.diffusion_T:
            raise ValueError(
                f"sampler.steps = {self.sampler_steps} exceeds diffusion.T = {self.diffusion_T}"
            )
        if self.sampler_variant not in ("paper-exact", "local-ddim"):
            raise ValueError(f"sampler.variant {self.sampler_variant!r} unknown")
        if self.synth_scenes < 1 or self.synth_n_condition < 1 or self.synth_rate < 1:
            raise ValueError("synth.* values must be positive")
        if self.fscore_threshold <= 0:
            raise ValueError("eval.fscore_threshold must be > 0")
        return self


# key -> (attribute path, converter). Tuple-valued entries use the
# n-ary converters; scene/train/rcd fields are nested dataclasses.
def _key_table():
    return {
        "seed": ("seed", fc.as_int),
        "grid.resolution": ("grid_resolution", lambda v, k: fc.as_ints(v, k, 3)),
        "grid.min_corner": ("grid_min_corner", lambda v, k: fc.as_floats(v, k, 3)),
        "grid.max_corner": ("grid_max_corner", lambda v, k: fc.as_floats(v, k, 3)),
        "scene.seed": ("scene.seed", fc.as_int),
        "scene.ground_half_extent": ("scene.ground_half_extent", fc.as_float),
        "scene.ground_z": ("scene.ground_z", fc.as_float),
        "scene.box_count": ("scene.box_count", lambda v, k: fc.as_ints(v, k, 2)),
        "scene.box_size": ("scene.box_size", lambda v, k: fc.as_floats(v, k, 2)),
        "scene.pole_count": ("scene.pole_count", lambda v, k: fc.as_ints(v, k, 2)),
        "scene.pole_radius": ("scene.pole_radius", lambda v, k: fc.as_floats(v, k, 2)),
        "scene.pole_height": ("scene.pole_height", lambda v, k: fc.as_floats(v, k, 2)),
        "scene.density": ("scene.density", fc.as_float),
        "scene.object_scatter": ("scene.object_scatter", fc.as_float),
        "synth.scenes": ("synth_scenes", fc.as_int),
        "synth.n_condition": ("synth_n_condition", fc.as_int),
        "synth.rate": ("synth_rate", fc.as_int),
        "diffusion.T": ("diffusion_T", fc.as_int),
        "diffusion.beta_0": ("diffusion_beta_0", fc.as_float),
        "diffusion.beta_T": ("diffusion_beta_T", fc.as_float),
        "denoiser.voxel_channels": ("denoiser_voxel_channels", fc.as_int),
        "denoiser.time_embed_dim": ("denoiser_time_embed_dim", fc.as_int),
        "denoiser.stem_kernel": ("denoiser_stem_kernel", fc.as_int),
        "denoiser.mprb_kernels": ("denoiser_mprb_kernels", lambda v, k: fc.as_ints(v, k, 3)),
        "denoiser.mprb_dilations": ("denoiser_mprb_dilations", lambda v, k: fc.as_ints(v, k, 3)),
        "denoiser.unet_depth": ("denoiser_unet_depth", fc.as_int),
        "denoiser.unet_width": ("denoiser_unet_width", fc.as_int),
        "denoiser.cond_channels": ("denoiser_cond_channels", lambda v, k: fc.as_ints(v, k, 4)),
        "denoiser.match_dim": ("denoiser_match_dim", fc.as_int),
        "denoiser.point_channels": ("denoiser_point_channels", fc.as_int),
        "denoiser.interact_hidden": ("denoiser_interact_hidden", fc.as_int),
        "denoiser.head_hidden": ("denoiser_head_hidden", fc.as_int),
        "denoiser.neighbors": ("denoiser_neighbors", fc.as_int),
        "train.epochs": ("train.epochs", fc.as_int),
        "train.batch_size": ("train.batch_size", fc.as_int),
        "train.lr": ("train.lr", fc.as_float),
        "train.lr_halving_period_epochs": ("train.lr_halving_period_epochs", fc.as_int),
        "train.weight_decay": ("train.weight_decay", fc.as_float),
        "train.lambda": ("train.lam", fc.as_float),
        "train.p_uncond": ("train.p_uncond", fc.as_float),
        "train.rate": ("train.rate", fc.as_int),
        "train.seed": ("train.seed", fc.as_int),
        "sampler.steps": ("sampler_steps", fc.as_int),
        "sampler.guidance_scale": ("sampler_guidance_scale", fc.as_float),
        "sampler.variant": ("sampler_variant", lambda v, k: v),
        "rcd.groups": ("rcd.groups", fc.as_int),
        "rcd.targets_per_group": ("rcd.targets_per_group", fc.as_int),
        "rcd.recon_groups": ("rcd.recon_groups", fc.as_int),
        "rcd.match_groups": ("rcd.match_groups", fc.as_int),
        "rcd.seed": ("rcd.seed", fc.as_int),
        "eval.fscore_threshold": ("fscore_threshold", fc.as_float),
    }


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Build a validated RunConfig from an optional file plus overrides."""
    raw = fc.load_config_file(path) if path else {}
    raw.update(overrides or {})
    table = _key_table()
    top = {}
    nested = {"scene": {}, "train": {}, "rcd": {}}
    for key, value in raw.items():
        if key not in table:
            raise ValueError(f"unknown config key {key!r}")
        attr, conv = table[key]
        parsed = conv(value, key)
        if "." in attr:
            group, name = attr.split(".", 1)
            nested[group][name] = parsed
        else:
            top[attr] = parsed
    cfg = RunConfig(**top)
    if nested["scene"]:
        cfg = replace(cfg, scene=replace(cfg.scene, **nested["scene"]))
    if nested["train"]:
        cfg = replace(cfg, train=replace(cfg.train, **nested["train"]))
    if nested["rcd"]:
        cfg = replace(cfg, rcd=replace(cfg.rcd, **nested["rcd"]))
    return cfg.validate()


def config_text(cfg: RunConfig) -> str:
    """Render a RunConfig in the file format (round-trips through load)."""

    def fmt(value):
        if isinstance(value, tuple):
            return " ".join(str(v) for v in value)
        return str(value)

    pairs = {}
    for key, (attr, _) in _key_table().items():
        if "." in attr:
            group, name = attr.split(".", 1)
            value = getattr(getattr(cfg, group), name)
        else:
            value = getattr(cfg, attr)
        if value is None:
            continue  # e.g. the guidance scale, which has no default
        pairs[key] = fmt(value)
    return fc.format_config(pairs)
