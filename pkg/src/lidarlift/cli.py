"""Command line surface: synth, train, upsample, eval, inspect-schedule.

Every command validates its config up front, derives all randomness from
one root seed via labeled sub-seeds, and drops a ``run_manifest.json``
(config snapshot, versions, seeds, kernel backend) beside its outputs so
any artifact can be regenerated.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, kernels
from .cloudio import load_kitti_bin, load_ply, load_xyz, save_ply, save_xyz
from .diffusion import SamplerConfig, linear_schedule, sample, schedule_csv
from .flatconfig import sub_seed
from .geometry import PointCloud
from .metrics import evaluate
from .net import make_denoiser
from .runconfig import RunConfig, config_text, load_run_config
from .scenegen import generate_scene, make_training_pair, load_dataset, write_dataset
from .training import adam_init, load_checkpoint, train, write_history_csv
from .net.params import init_params


def _fail(message, code=2):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(code)


def _load_cloud(path) -> PointCloud:
    if not os.path.exists(path):
        _fail(f"no such file: {path}")
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".ply":
            return load_ply(path)
        if ext == ".xyz":
            return load_xyz(path)
        if ext == ".bin":
            return load_kitti_bin(path)
    except ValueError as exc:
        _fail(str(exc))
    _fail(f"unsupported cloud format {ext!r} (expected .ply, .xyz or .bin)")


def _write_manifest(out_dir, command, cfg: RunConfig, seeds, extras=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": config_text(cfg).splitlines(),
        "seeds": seeds,
        "versions": {
            "lidarlift": __version__,
            "numpy": np.__version__,
            "kernel_backend": kernels.BACKEND,
        },
    }
    manifest.update(extras or {})
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def cmd_synth(cfg: RunConfig, out_dir):
    """Generate scenes and training pairs into a dataset directory."""
    pairs = []
    seeds = {"root": cfg.seed}
    for i in range(cfg.synth_scenes):
        scene_seed = sub_seed(cfg.seed, f"scene:{i}")
        pair_seed = sub_seed(cfg.seed, f"pair:{i}")
        seeds[f"scene:{i}"] = scene_seed
        seeds[f"pair:{i}"] = pair_seed
        dense = generate_scene(replace(cfg.scene, seed=scene_seed))
        try:
            pairs.append(
                make_training_pair(
                    dense, cfg.synth_n_condition, cfg.synth_rate, pair_seed, scene_seed
                )
            )
        except ValueError as exc:
            _fail(f"scene {i}: {exc}")
    write_dataset(out_dir, pairs, cfg.scene, meta={"root_seed": cfg.seed})
    _write_manifest(out_dir, "synth", cfg, seeds)
    print(f"wrote {len(pairs)} pairs to {out_dir}")
    return 0


def cmd_train(cfg: RunConfig, dataset_dir, out_dir, resume=None):
    """Train the denoiser on a synthesized dataset."""
    if not os.path.isdir(dataset_dir):
        _fail(f"no such dataset directory: {dataset_dir}")
    pairs, _ = load_dataset(dataset_dir)
    ncfg = cfg.denoiser_config()
    sched = linear_schedule(*cfg.schedule_args())
    tcfg = replace(cfg.train, seed=sub_seed(cfg.seed, "train"))
    start_epoch = start_step = 0
    if resume is not None:
        if not os.path.exists(resume):
            _fail(f"no such checkpoint: {resume}")
        params, opt, extra = load_checkpoint(resume, ncfg)
        manifest = init_params(ncfg, 0)[1]
        start_epoch, start_step = extra["epoch"], extra["step"]
    else:
        params, manifest = init_params(ncfg, seed=sub_seed(cfg.seed, "params"))
        opt = adam_init(params)
    _write_manifest(
        out_dir, "train", cfg,
        {"root": cfg.seed, "train": tcfg.seed},
        extras={"dataset": os.path.abspath(dataset_dir), "resumed_from": resume},
    )
    _, history = train(
        params, opt, pairs, sched, tcfg, ncfg,
        manifest=manifest, out_dir=out_dir,
        start_epoch=start_epoch, start_step=start_step,
    )
    write_history_csv(history, os.path.join(out_dir, "loss_history.csv"))
    print(f"trained {len(history)} steps; checkpoints in {out_dir}")
    return 0


def cmd_upsample(cfg: RunConfig, checkpoint, input_path, out_dir, rate, guidance, steps):
    """Upsample one cloud with a trained checkpoint."""
    if guidance is None:
        guidance = cfg.sampler_guidance_scale
    if guidance is None:
        _fail("no guidance scale: pass --guidance or set sampler.guidance_scale")
    if steps is None:
        steps = cfg.sampler_steps
    if not os.path.exists(checkpoint):
        _fail(f"no such checkpoint: {checkpoint}")
    condition = _load_cloud(input_path)
    ncfg = cfg.denoiser_config()
    try:
        params, _, _ = load_checkpoint(checkpoint, ncfg)
    except ValueError as exc:
        _fail(str(exc))
    sched = linear_schedule(*cfg.schedule_args())
    sampler_seed = sub_seed(cfg.seed, "sampler")
    scfg = SamplerConfig(
        guidance_scale=guidance, steps=steps, variant=cfg.sampler_variant, seed=sampler_seed
    )
    try:
        result = sample(make_denoiser(params, ncfg), condition, rate, scfg, sched)
    except ValueError as exc:
        _fail(str(exc))
    os.makedirs(out_dir, exist_ok=True)
    save_ply(result, os.path.join(out_dir, "upsampled.ply"))
    save_xyz(result, os.path.join(out_dir, "upsampled.xyz"))
    _write_manifest(
        out_dir, "upsample", cfg,
        {"root": cfg.seed, "sampler": sampler_seed},
        extras={
            "checkpoint": os.path.abspath(checkpoint),
            "input": os.path.abspath(input_path),
            "rate": rate,
            "guidance_scale": guidance,
            "steps": steps,
        },
    )
    print(f"wrote {result.count} points to {os.path.join(out_dir, 'upsampled.ply')}")
    return 0


def cmd_eval(cfg: RunConfig, pred_path, ref_path, out_dir, threshold=None):
    """Evaluate a predicted cloud against a reference cloud."""
    pred = _load_cloud(pred_path)
    ref = _load_cloud(ref_path)
    rcd_cfg = replace(cfg.rcd, seed=sub_seed(cfg.seed, "rcd"))
    thr = cfg.fscore_threshold if threshold is None else threshold
    try:
        report = evaluate(pred, ref, rcd_cfg, thr)
    except ValueError as exc:
        _fail(str(exc))
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "metric_report.json")
    with open(report_path, "w") as fh:
        fh.write(report.to_json() + "\n")
    _write_manifest(
        out_dir, "eval", cfg,
        {"root": cfg.seed, "rcd": rcd_cfg.seed},
        extras={"predicted": os.path.abspath(pred_path), "reference": os.path.abspath(ref_path)},
    )
    print(report.to_json())
    return 0


def cmd_inspect_schedule(cfg: RunConfig, out_dir):
    """Dump the noise schedule as CSV for inspection."""
    sched = linear_schedule(*cfg.schedule_args())
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "schedule.csv")
    with open(path, "w") as fh:
        fh.write(schedule_csv(sched))
    _write_manifest(out_dir, "inspect-schedule", cfg, {"root": cfg.seed})
    print(f"wrote {sched.T} steps to {path}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lidarlift",
        description="Scene-level LiDAR point cloud upsampling via conditional diffusion.",
    )
    parser.add_argument("--print-config", action="store_true",
                        help="print the full default config and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="flat key-value config file")
        p.add_argument("--seed", type=int, help="root seed override")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic training dataset")
    common(p)

    p = sub.add_parser("train", help="train the noise predictor")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset directory from synth")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("upsample", help="upsample a sparse cloud")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="sparse cloud (.ply/.xyz/.bin)")
    p.add_argument("--rate", type=int, required=True, help="upsampling rate R")
    p.add_argument("--guidance", type=float, help="guidance scale s")
    p.add_argument("--steps", type=int, help="denoising steps")

    p = sub.add_parser("eval", help="compute CD/RCD/F-score between two clouds")
    common(p)
    p.add_argument("--pred", required=True, help="predicted cloud")
    p.add_argument("--ref", required=True, help="reference cloud")
    p.add_argument("--threshold", type=float, help="F-score distance threshold (m)")

    p = sub.add_parser("inspect-schedule", help="dump the beta/alpha/alpha_bar table")
    common(p)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(config_text(RunConfig()), end="")
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.config is not None and not os.path.exists(args.config):
        _fail(f"no such config file: {args.config}")
    try:
        cfg = load_run_config(args.config, overrides)
    except ValueError as exc:
        _fail(str(exc))

    if args.command == "synth":
        return cmd_synth(cfg, args.out)
    if args.command == "train":
        return cmd_train(cfg, args.dataset, args.out, args.resume)
    if args.command == "upsample":
        return cmd_upsample(
            cfg, args.checkpoint, args.input, args.out, args.rate, args.guidance, args.steps
        )
    if args.command == "eval":
        return cmd_eval(cfg, args.pred, args.ref, args.out, args.threshold)
    if args.command == "inspect-schedule":
        return cmd_inspect_schedule(cfg, args.out)
    parser.print_help()
    return 2


if __name__ == "__main__":
    sys.exit(main())
