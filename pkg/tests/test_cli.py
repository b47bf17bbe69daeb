"""Config parsing, CLI commands, and the end-to-end smoke pipeline."""

import json

import numpy as np
import pytest

from lidarlift.cli import main
from lidarlift.cloudio import load_ply, save_ply
from lidarlift.flatconfig import parse_config_text, sub_seed
from lidarlift.geometry import PointCloud
from lidarlift.net import init_params
from lidarlift.runconfig import RunConfig, config_text, load_run_config
from lidarlift.training import adam_init, save_checkpoint

# a desk-size config that keeps every CLI test fast
TINY = """
seed = 11
grid.resolution = 16 16 4
grid.min_corner = -4 -4 -1
grid.max_corner = 4 4 1
scene.ground_half_extent = 3.5
scene.box_count = 2 4
scene.box_size = 0.3 0.8
scene.pole_count = 2 4
scene.pole_height = 0.4 1.0
scene.density = 14
synth.scenes = 2
synth.n_condition = 48
synth.rate = 2
diffusion.T = 12
diffusion.beta_0 = 1e-3
diffusion.beta_T = 2e-2
denoiser.voxel_channels = 4
denoiser.time_embed_dim = 6
denoiser.unet_width = 4
denoiser.unet_depth = 1
denoiser.cond_channels = 3 4 5 6
denoiser.match_dim = 6
denoiser.point_channels = 4
denoiser.interact_hidden = 6
denoiser.head_hidden = 5
denoiser.neighbors = 4
train.epochs = 2
train.batch_size = 2
train.lr = 1e-3
sampler.steps = 3
sampler.guidance_scale = 2.0
rcd.groups = 8
rcd.targets_per_group = 6
rcd.recon_groups = 3
rcd.match_groups = 5
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


class TestFlatConfig:
    def test_parse_and_comments(self):
        raw = parse_config_text("# header\na.b = 1 2 3  # trailing\n\nc = x\n")
        assert raw == {"a.b": "1 2 3", "c": "x"}

    def test_bad_line(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_config_text("a = 1\nbogus line\n")

    def test_sub_seed_stable_and_distinct(self):
        a = sub_seed(42, "scene:0")
        assert a == sub_seed(42, "scene:0")
        assert a != sub_seed(42, "scene:1")
        assert a != sub_seed(43, "scene:0")


class TestRunConfig:
    def test_defaults_round_trip(self, tmp_path):
        text = config_text(RunConfig())
        path = tmp_path / "defaults.cfg"
        path.write_text(text)
        cfg = load_run_config(str(path))
        assert config_text(cfg) == text

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("nonsense.key = 3\n")
        with pytest.raises(ValueError, match="nonsense.key"):
            load_run_config(str(path))

    def test_cross_field_check(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("diffusion.T = 10\nsampler.steps = 20\n")
        with pytest.raises(ValueError, match="sampler.steps"):
            load_run_config(str(path))

    def test_malformed_value_names_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("train.lr = fast\n")
        with pytest.raises(ValueError, match="train.lr"):
            load_run_config(str(path))

    def test_guidance_has_no_default(self):
        assert RunConfig().sampler_guidance_scale is None


class TestCli:
    def test_print_config(self, capsys):
        assert main(["--print-config"]) == 0
        out = capsys.readouterr().out
        parsed = parse_config_text(out)
        assert parsed["diffusion.beta_0"] == "3.5e-05"
        assert parsed["rcd.groups"] == "64"
        assert "sampler.guidance_scale" not in parsed

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("train.lr = fast\n")
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert exc.value.code == 2
        assert "train.lr" in capsys.readouterr().err

    def test_missing_file_exit_code(self, tiny_config, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main([
                "eval", "--config", tiny_config, "--out", str(tmp_path / "o"),
                "--pred", str(tmp_path / "none.ply"), "--ref", str(tmp_path / "none.ply"),
            ])
        assert exc.value.code == 2

    def test_synth_writes_dataset_and_manifest(self, tiny_config, tmp_path):
        out = tmp_path / "ds"
        assert main(["synth", "--config", tiny_config, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["pairs"]) == 2
        run = json.loads((out / "run_manifest.json").read_text())
        assert run["command"] == "synth"
        assert "scene:0" in run["seeds"]
        cond = load_ply(out / manifest["pairs"][0]["condition"])
        assert cond.count == 48

    def test_synth_reproducible(self, tiny_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--config", tiny_config, "--out", str(a)])
        main(["synth", "--config", tiny_config, "--out", str(b)])
        assert (a / "pair_0000_input.ply").read_bytes() == (b / "pair_0000_input.ply").read_bytes()

    def test_eval_identical_files_cd_zero(self, tiny_config, tmp_path, rng):
        cloud = PointCloud(rng.uniform(-3, 3, (60, 3)))
        ply = tmp_path / "c.ply"
        save_ply(cloud, ply)
        out = tmp_path / "eval"
        code = main([
            "eval", "--config", tiny_config, "--out", str(out),
            "--pred", str(ply), "--ref", str(ply),
        ])
        assert code == 0
        report = json.loads((out / "metric_report.json").read_text())
        assert report["cd"] == 0.0
        assert report["fscore"] == 1.0

    def test_inspect_schedule(self, tiny_config, tmp_path):
        out = tmp_path / "sched"
        assert main(["inspect-schedule", "--config", tiny_config, "--out", str(out)]) == 0
        lines = (out / "schedule.csv").read_text().strip().splitlines()
        assert lines[0] == "t,beta,alpha,alpha_bar"
        assert len(lines) == 13

    def test_upsample_count_contract(self, tiny_config, tmp_path, rng):
        cfg = load_run_config(tiny_config)
        ncfg = cfg.denoiser_config()
        params, manifest = init_params(ncfg, seed=1)
        ckpt = tmp_path / "u.ckpt"
        save_checkpoint(params, adam_init(params), manifest, ckpt)
        cloud = PointCloud(rng.uniform(-3, 3, (64, 3)))
        inp = tmp_path / "in.ply"
        save_ply(cloud, inp)
        out = tmp_path / "up"
        code = main([
            "upsample", "--config", tiny_config, "--out", str(out),
            "--checkpoint", str(ckpt), "--input", str(inp), "--rate", "4",
        ])
        assert code == 0
        result = load_ply(out / "upsampled.ply")
        assert result.count == 256
        assert (out / "upsampled.xyz").exists()

    def test_upsample_requires_guidance(self, tmp_path, rng):
        cfg_text = TINY.replace("sampler.guidance_scale = 2.0\n", "")
        cfg_path = tmp_path / "no_guidance.cfg"
        cfg_path.write_text(cfg_text)
        with pytest.raises(SystemExit) as exc:
            main([
                "upsample", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                "--checkpoint", str(tmp_path / "x.ckpt"), "--input", str(tmp_path / "x.ply"),
                "--rate", "2",
            ])
        assert exc.value.code == 2

    def test_upsample_rejects_mismatched_checkpoint(self, tiny_config, tmp_path, rng):
        other = load_run_config(tiny_config, {"denoiser.voxel_channels": "8"})
        params, manifest = init_params(other.denoiser_config(), seed=1)
        ckpt = tmp_path / "wrong.ckpt"
        save_checkpoint(params, adam_init(params), manifest, ckpt)
        cloud = PointCloud(rng.uniform(-3, 3, (32, 3)))
        inp = tmp_path / "in.ply"
        save_ply(cloud, inp)
        with pytest.raises(SystemExit):
            main([
                "upsample", "--config", tiny_config, "--out", str(tmp_path / "o"),
                "--checkpoint", str(ckpt), "--input", str(inp), "--rate", "2",
            ])


class TestPipelineSmoke:
    def test_synth_train_upsample_eval(self, tiny_config, tmp_path):
        """The full operator loop exits 0 and produces the promised files."""
        ds = tmp_path / "ds"
        run = tmp_path / "run"
        up = tmp_path / "up"
        ev = tmp_path / "ev"
        assert main(["synth", "--config", tiny_config, "--out", str(ds)]) == 0
        assert main([
            "train", "--config", tiny_config, "--dataset", str(ds), "--out", str(run),
        ]) == 0
        assert (run / "loss_history.csv").exists()
        ckpt = run / "checkpoint_epoch0001.ckpt"
        assert ckpt.exists()
        assert main([
            "upsample", "--config", tiny_config, "--out", str(up),
            "--checkpoint", str(ckpt), "--input", str(ds / "pair_0000_condition.ply"),
            "--rate", "2",
        ]) == 0
        assert main([
            "eval", "--config", tiny_config, "--out", str(ev),
            "--pred", str(up / "upsampled.ply"),
            "--ref", str(ds / "pair_0000_condition.ply"),
        ]) == 0
        report = json.loads((ev / "metric_report.json").read_text())
        assert np.isfinite(report["cd"])
        assert 0.0 <= report["fscore"] <= 1.0
