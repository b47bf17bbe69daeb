"""Procedural scenes, training pairs, sweep emulation, noise harness."""

import numpy as np
import pytest

from lidarlift.geometry import PointCloud
from lidarlift.scenegen import (
    SceneSpec,
    TrainingPair,
    generate_scene,
    load_dataset,
    make_training_pair,
    perturb_gaussian,
    sample_box_surface,
    scene_spec_from_config,
    scene_spec_to_config,
    simulate_sweep,
    write_dataset,
)

FLAT = SceneSpec(seed=1, box_count=(0, 0), pole_count=(0, 0), ground_half_extent=5.0)


class TestGenerateScene:
    def test_zero_objects_gives_pure_plane(self):
        cloud = generate_scene(FLAT)
        assert cloud.count > 0
        assert np.all(cloud.points[:, 2] == FLAT.ground_z)

    def test_same_seed_bit_identical(self):
        spec = SceneSpec(seed=7)
        a, b = generate_scene(spec), generate_scene(spec)
        np.testing.assert_array_equal(a.points, b.points)

    def test_different_seed_differs(self):
        a = generate_scene(SceneSpec(seed=1))
        b = generate_scene(SceneSpec(seed=2))
        assert a.count != b.count or not np.array_equal(a.points, b.points)

    def test_box_count_matches_area_times_density(self):
        size = (2.0, 1.0, 3.0)
        area = 2 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2])
        density = 50.0
        g = np.random.default_rng(42)
        pts = sample_box_surface(g, (0.0, 0.0), size, 0.0, density)
        expect = area * density
        assert abs(len(pts) - expect) <= 3 * np.sqrt(expect)

    def test_objects_rest_on_ground(self):
        spec = SceneSpec(seed=3, box_count=(5, 5), pole_count=(5, 5), density=40.0)
        cloud = generate_scene(spec)
        assert cloud.points[:, 2].min() == spec.ground_z
        assert np.all(cloud.points[:, 2] >= spec.ground_z)

    def test_zero_density_rejected(self):
        with pytest.raises(ValueError, match="density"):
            SceneSpec(density=0.0)


class TestTrainingPair:
    def test_rate_one_same_cardinality(self):
        dense = generate_scene(SceneSpec(seed=5, density=10.0))
        pair = make_training_pair(dense, 100, 1, seed=9)
        assert pair.condition.count == pair.input.count == 100

    def test_counts_multiply(self):
        dense = generate_scene(SceneSpec(seed=5, ground_half_extent=12.0))
        pair = make_training_pair(dense, 1024, 4, seed=2)
        assert pair.input.count == 4096
        assert pair.condition.count == 1024

    def test_members_come_from_dense(self):
        dense = generate_scene(SceneSpec(seed=6, density=10.0))
        pair = make_training_pair(dense, 64, 3, seed=1)
        pool = {tuple(p) for p in dense.points}
        assert all(tuple(p) in pool for p in pair.condition.points)
        assert all(tuple(p) in pool for p in pair.input.points)

    def test_shortfall_named(self):
        dense = PointCloud(np.random.default_rng(0).standard_normal((100, 3)))
        with pytest.raises(ValueError, match="300 short"):
            make_training_pair(dense, 100, 4, seed=0)

    def test_invariant_enforced_at_construction(self):
        pts = np.zeros((10, 3))
        with pytest.raises(ValueError, match="rate"):
            TrainingPair(PointCloud(pts[:4]), PointCloud(pts), rate=3, seed=0)

    def test_deterministic(self):
        dense = generate_scene(SceneSpec(seed=5))
        a = make_training_pair(dense, 200, 2, seed=4)
        b = make_training_pair(dense, 200, 2, seed=4)
        np.testing.assert_array_equal(a.condition.points, b.condition.points)
        np.testing.assert_array_equal(a.input.points, b.input.points)


class TestSimulateSweep:
    def test_bin_bound(self):
        dense = generate_scene(SceneSpec(seed=8))
        out = simulate_sweep(dense, (0, 0, 1.5), beams=1, azimuth_steps=4)
        assert out.count <= 4

    def test_subset_of_dense(self):
        dense = generate_scene(SceneSpec(seed=9, density=3.0))
        out = simulate_sweep(dense, (0, 0, 1.5), beams=8, azimuth_steps=64)
        pool = {tuple(p) for p in dense.points}
        assert all(tuple(p) in pool for p in out.points)

    def test_more_beams_never_fewer_points(self):
        for seed in range(10):
            dense = generate_scene(SceneSpec(seed=seed, density=4.0))
            counts = [
                simulate_sweep(dense, (0, 0, 1.5), beams=b, azimuth_steps=32).count
                for b in (1, 2, 4, 8, 16)
            ]
            assert counts == sorted(counts)

    def test_empty_input(self):
        out = simulate_sweep(PointCloud(np.zeros((0, 3))), (0, 0, 0), 4, 4)
        assert out.count == 0

    def test_deterministic(self):
        dense = generate_scene(SceneSpec(seed=10))
        a = simulate_sweep(dense, (0, 0, 1.0), 4, 16)
        b = simulate_sweep(dense, (0, 0, 1.0), 4, 16)
        np.testing.assert_array_equal(a.points, b.points)


class TestPerturbGaussian:
    def test_tau_zero_identical(self, rng):
        cloud = PointCloud(rng.standard_normal((50, 3)))
        out = perturb_gaussian(cloud, 0.0, seed=1)
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_offset_statistics(self):
        n = 100_000
        cloud = PointCloud(np.zeros((n, 3)))
        tau = 0.37
        out = perturb_gaussian(cloud, tau, seed=123)
        offsets = out.points
        assert abs(offsets.mean()) <= 4 * tau / np.sqrt(3 * n)
        assert abs(offsets.std() - tau) <= 0.02 * tau

    def test_negative_tau_rejected(self, rng):
        with pytest.raises(ValueError):
            perturb_gaussian(PointCloud(rng.standard_normal((5, 3))), -0.1, seed=0)


def test_scene_spec_config_roundtrip():
    spec = SceneSpec(seed=77, ground_half_extent=9.5, box_count=(2, 6), density=17.0)
    text = scene_spec_to_config(spec)
    assert scene_spec_from_config(text) == spec


def test_dataset_roundtrip(tmp_path):
    dense = generate_scene(SceneSpec(seed=11))
    pairs = [make_training_pair(dense, 50, 2, seed=s, scene_seed=11) for s in (1, 2)]
    write_dataset(tmp_path / "ds", pairs, SceneSpec(seed=11), meta={"note": "test"})
    loaded, manifest = load_dataset(tmp_path / "ds")
    assert len(loaded) == 2
    assert manifest["pairs"][0]["scene_seed"] == 11
    for orig, back in zip(pairs, loaded):
        np.testing.assert_array_equal(orig.condition.points, back.condition.points)
        np.testing.assert_array_equal(orig.input.points, back.input.points)
        assert back.rate == orig.rate
