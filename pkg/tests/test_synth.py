from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from src.core.geometry import align_streams, outlier_mask
from src.core.loaders import load_preset
from src.core.models import LEVELS, BehaviorSpec, KeypointCloud, SceneSpec, SpanConfig
from src.core.synth import generate, inject_outliers, validate_specs, with_duration
from src.core.voxel import lift_frame, voxelize


def test_generation_is_deterministic(small_scene, small_behavior, span_cfg, streams):
    again, _ = generate(small_scene, small_behavior, 0.1, span_cfg, tag="desk")
    np.testing.assert_array_equal(again.points.positions, streams.points.positions)
    np.testing.assert_array_equal(again.points.observed_at, streams.points.observed_at)
    np.testing.assert_array_equal(again.trajectory.quaternions, streams.trajectory.quaternions)
    np.testing.assert_array_equal(again.gaze.directions, streams.gaze.directions)
    assert again.recording_id == streams.recording_id


def test_streams_are_well_formed(streams, small_behavior):
    assert len(streams.trajectory) == 100
    assert len(streams.gaze) == 100
    assert np.all(np.diff(streams.trajectory.times) > 0)
    np.testing.assert_allclose(np.linalg.norm(streams.gaze.directions, axis=1), 1.0)
    np.testing.assert_allclose(np.linalg.norm(streams.trajectory.quaternions, axis=1), 1.0)
    assert np.all(np.diff(streams.points.observed_at) >= 0)
    assert streams.tag == "desk"


def test_coverage_respects_level_nesting(truth):
    cov = truth.coverage
    assert set(cov) == set(LEVELS)
    assert all(0.0 <= v <= 1.0 for v in cov.values())
    assert cov["foveal"] <= cov["central"] <= cov["peripheral"]
    assert cov["peripheral"] > 0.9


@pytest.mark.parametrize("name", ["desk", "kitchen", "workshop"])
def test_bundled_presets_keep_every_level_populated(name):
    scene, behavior = load_preset(name)
    _, truth = generate(scene, behavior, 0.1, SpanConfig())
    assert len(truth.frames) == 600
    assert min(truth.coverage.values()) >= 0.99, truth.coverage


def test_ground_truth_matches_lifted_frames(streams, truth):
    cfg = SpanConfig(cube_length_m=3.2, resolution=8, outlier_filter=False)
    bundles = align_streams(streams.points, streams.trajectory, streams.gaze, 0.1)
    assert len(bundles) == len(truth.frames)
    for bundle, frame in list(zip(bundles, truth.frames))[::7]:
        lifted = lift_frame(bundle, cfg, 0.1)
        anchor = bundle.pose
        assert voxelize(lifted.observed, anchor, cfg) == voxelize(frame.scene_points(), anchor, cfg)
        for level in LEVELS:
            assert voxelize(lifted.levels[level], anchor, cfg) == voxelize(frame.level_points(level), anchor, cfg)


def test_jitter_is_bounded(small_scene, small_behavior, span_cfg):
    still = small_scene.model_copy(update={"jitter_m": 0.0})
    exact, _ = generate(still, small_behavior, 0.1, span_cfg)
    noisy, _ = generate(small_scene, small_behavior, 0.1, span_cfg)
    assert len(exact.points) == len(noisy.points)
    offsets = np.linalg.norm(noisy.points.positions - exact.points.positions, axis=1)
    assert offsets.max() <= small_scene.jitter_m + 1e-12


# ── Spec validation ──────────────────────────────────────────────────────

def test_unknown_gaze_target_rejected(small_scene, small_behavior):
    bad = BehaviorSpec.model_validate(
        {**small_behavior.model_dump(), "gaze_program": [{"target": 9, "fixation_s": 1.0}]}
    )
    with pytest.raises(ValueError, match="gaze target 9"):
        validate_specs(small_scene, bad)


def test_cluster_outside_room_rejected():
    scene = SceneSpec(room_extent_m=(2.0, 2.0, 2.0), object_clusters=[{"center": (5.0, 0.0, 1.0)}])
    behavior = BehaviorSpec(
        duration_s=2.0, walk={"waypoints": [(0, 0, 1.0)]}, gaze_program=[{"target": 0, "fixation_s": 1.0}]
    )
    with pytest.raises(ValueError, match="outside the room"):
        validate_specs(scene, behavior)


def test_gaze_program_longer_than_duration_rejected():
    with pytest.raises(ValidationError):
        BehaviorSpec(
            duration_s=1.0,
            walk={"waypoints": [(0, 0, 1.6)]},
            gaze_program=[{"target": 0, "fixation_s": 2.0}],
        )


def test_jitter_above_one_centimeter_rejected():
    with pytest.raises(ValidationError):
        SceneSpec(jitter_m=0.02)


def test_with_duration_trims_program(small_behavior):
    short = with_duration(small_behavior, 2.5)
    assert short.duration_s == 2.5
    assert [s.target for s in short.gaze_program] == [0, 1]
    assert sum(s.fixation_s + s.saccade_s for s in short.gaze_program) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        with_duration(small_behavior, 0.05)


# ── Outlier injection ────────────────────────────────────────────────────

def test_injected_outliers_are_isolated_and_filtered():
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(2000, 3))
    blob = 0.2 * dirs / np.linalg.norm(dirs, axis=1, keepdims=True) + np.array([1.0, 0.0, 1.0])
    cloud = KeypointCloud(blob, np.ones(2000), np.zeros(2000))
    merged, injected = inject_outliers(cloud, 0.01, 1.0, seed=3)
    assert int(injected.sum()) == 20
    extra = merged.positions[injected]
    dist = np.linalg.norm(extra[:, None] - blob[None], axis=2)
    assert dist.min() >= 1.0
    keep = outlier_mask(merged.positions, 16, 2.0)
    assert (~keep[injected]).mean() >= 0.95
    assert keep[~injected].mean() >= 0.99


def test_inject_outliers_rate_bounds():
    cloud = KeypointCloud(np.zeros((4, 3)), np.ones(4), np.zeros(4))
    with pytest.raises(ValueError):
        inject_outliers(cloud, 1.5, 1.0, 0)
    same, mask = inject_outliers(cloud, 0.0, 1.0, 0)
    assert same is cloud and not mask.any()
