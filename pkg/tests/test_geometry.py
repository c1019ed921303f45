from __future__ import annotations

import inspect
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.config import FRAME_QUANTUM_S
from src.core.geometry import (
    align_streams,
    classify_span,
    cone_mask,
    filter_outliers,
    in_cube,
    look_rotation,
    outlier_mask,
    select_observed,
    slerp,
    transform_to_local,
    transform_to_world,
)
from src.core.models import GazeStream, KeypointCloud, Pose, SpanConfig, SpanDiagnostics, Trajectory
from src.core.synth import generate
from src.core.voxel import build_multilevel, lift_frame


# ── Helpers ──────────────────────────────────────────────────────────────

def _random_pose(seed: int) -> Pose:
    rng = np.random.default_rng(seed)
    x, y, z, w = Rotation.random(random_state=seed).as_quat()
    return Pose(np.array([w, x, y, z]), rng.uniform(-2, 2, 3))


def _cloud(positions, times=None) -> KeypointCloud:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    times = np.zeros(len(positions)) if times is None else np.asarray(times, dtype=np.float64)
    return KeypointCloud(positions, np.ones(len(positions)), times)


def _oracle_outliers(positions: np.ndarray, k: int, ratio: float) -> np.ndarray:
    keep = np.ones(len(positions), dtype=bool)
    while keep.sum() > k:
        idx = np.flatnonzero(keep)
        pts = positions[idx]
        dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        mean_d = np.sort(dist, axis=1)[:, 1:k + 1].mean(axis=1)
        limit = max(mean_d.mean() + ratio * mean_d.std(), 2.0 * np.median(mean_d))
        drop = mean_d > limit + 1e-9 * max(limit, 1.0)
        if not drop.any():
            break
        keep[idx[drop]] = False
    return keep


def _oracle_select(points: KeypointCloud, pose: Pose, t: float, cfg: SpanConfig, q: float) -> np.ndarray:
    keep = []
    for p, at in zip(points.positions, points.observed_at):
        same_frame = round(at / q) == round(t / q)
        inside = all(abs(p[i] - pose.translation[i]) < cfg.cube_length_m / 2 for i in range(3))
        keep.append(same_frame and inside)
    keep = np.array(keep, dtype=bool)
    positions = points.positions[keep]
    return positions[_oracle_outliers(positions, cfg.outlier_neighbors, cfg.outlier_std_ratio)]


def _oracle_cone(points: np.ndarray, pose: Pose, axis: np.ndarray, theta: float) -> np.ndarray:
    out = []
    for p in points:
        v = pose.matrix.T @ (p - pose.translation)
        n = np.linalg.norm(v)
        out.append(n > 0 and (v @ axis) / (n * np.linalg.norm(axis)) > math.cos(math.radians(theta)))
    return np.array(out, dtype=bool)


# ── Pose algebra ─────────────────────────────────────────────────────────

def test_local_world_round_trip():
    pose = _random_pose(3)
    pts = np.random.default_rng(0).normal(size=(50, 3))
    back = transform_to_local(pose, transform_to_world(pose, pts))
    np.testing.assert_allclose(back, pts, atol=1e-9)


def test_pose_compose_with_inverse_is_identity():
    pose = _random_pose(5)
    ident = pose.compose(pose.inverse())
    np.testing.assert_allclose(ident.matrix, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-12)


def test_pose_rejects_non_unit_quaternion():
    with pytest.raises(ValueError, match="not unit"):
        Pose(np.array([1.0, 0.1, 0.0, 0.0]), np.zeros(3))


def test_look_rotation_is_orthonormal_with_forward_z():
    forward = np.array([1.0, 0.5, -0.3])
    r = look_rotation(forward)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)
    np.testing.assert_allclose(r[:, 2], forward / np.linalg.norm(forward))


def test_slerp_midpoint_of_orthogonal_vectors():
    a, b = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    np.testing.assert_allclose(slerp(a, b, 0.5), np.array([1, 1, 0]) / math.sqrt(2))
    np.testing.assert_allclose(slerp(a, b, 1.0), b, atol=1e-12)
    np.testing.assert_allclose(slerp(a, a, 0.3), a)


@pytest.mark.parametrize("a", [[0, 0, 1.0], [1.0, 0, 0], [0.6, 0, 0.8]])
def test_slerp_between_opposite_vectors_stays_on_the_sphere(a):
    a = np.asarray(a)
    for u in (0.0, 0.25, 0.5, 1.0):
        out = slerp(a, -a, u)
        assert np.all(np.isfinite(out))
        assert np.linalg.norm(out) == pytest.approx(1.0)
        assert math.degrees(math.acos(np.clip(out @ a, -1, 1))) == pytest.approx(180.0 * u, abs=1e-4)


# ── Cone classification ──────────────────────────────────────────────────

def test_cone_mask_boundary_and_degenerate_points():
    axis = np.array([0.0, 0.0, 1.0])
    inside_dir = [math.sin(math.radians(1.5)), 0.0, math.cos(math.radians(1.5))]
    outside_dir = [math.sin(math.radians(3.0)), 0.0, math.cos(math.radians(3.0))]
    local = np.array([[0, 0, 2.0], inside_dir, outside_dir, [0, 0, 0], [0, 0, -1.0]])
    inside, degenerate = cone_mask(local, axis, 2.0)
    assert inside.tolist() == [True, True, False, False, False]
    assert degenerate == 1


@pytest.mark.parametrize("theta", [0.0, 180.0, -5.0])
def test_classify_span_rejects_bad_angle(theta):
    with pytest.raises(ValueError):
        classify_span(_cloud([[0, 0, 1]]), Pose.identity(), np.array([0, 0, 1.0]), theta)


def test_classify_span_counts_degenerate_points():
    diag = SpanDiagnostics()
    pose = Pose.identity()
    cloud = _cloud([[0, 0, 0], [0, 0, 1]])
    out = classify_span(cloud, pose, np.array([0, 0, 1.0]), 30.0, diag)
    assert len(out) == 1
    assert diag.degenerate_points == 1


def test_gaze_cones_are_nested():
    rng = np.random.default_rng(11)
    local = rng.normal(size=(5000, 3))
    gaze = np.array([0.2, -0.1, 1.0])
    masks = [cone_mask(local, gaze, th)[0] for th in (2.0, 8.0, 30.0)]
    assert not np.any(masks[0] & ~masks[1])
    assert not np.any(masks[1] & ~masks[2])


def test_narrower_cone_is_a_subset_over_random_configurations():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        local = rng.normal(size=(40, 3))
        axis = rng.normal(size=3)
        small, large = np.sort(rng.uniform(0.5, 179.5, 2))
        inner = cone_mask(local, axis, small)[0]
        outer = cone_mask(local, axis, large)[0]
        assert not np.any(inner & ~outer)


@pytest.mark.parametrize("seed", range(5))
def test_classify_span_is_invariant_under_a_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(300, 3))
    pose = _random_pose(seed)
    motion = _random_pose(50 + seed)
    axis = np.array([0.1, -0.2, 1.0])
    moved_cloud = _cloud(motion.transform_to_world(pts))
    before = classify_span(_cloud(pts), pose, axis, 30.0)
    after = classify_span(moved_cloud, motion.compose(pose), axis, 30.0)
    assert len(before) == len(after)
    np.testing.assert_allclose(motion.transform_to_local(after.positions), before.positions, atol=1e-9)


# ── Observed-point selection ─────────────────────────────────────────────

def test_in_cube_is_strict():
    center = np.zeros(3)
    pts = np.array([[1.6, 0, 0], [1.5999, 0, 0], [0, -1.6, 0]])
    assert in_cube(pts, center, 3.2).tolist() == [False, True, False]


def test_select_observed_keeps_only_the_frame_of_t():
    cfg = SpanConfig(outlier_filter=False)
    cloud = _cloud([[0, 0, 1], [0, 0, 1.1], [0, 0, 1.2]], times=[0.0, 0.1, 0.1])
    observed = select_observed(cloud, Pose.identity(), 0.1, cfg, 0.1)
    np.testing.assert_allclose(observed.observed_at, [0.1, 0.1])


def test_outlier_mask_keeps_uniform_ring():
    angles = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    ring = np.column_stack([np.cos(angles), np.sin(angles), np.zeros(40)])
    assert outlier_mask(ring, 16, 2.0).all()


def test_outlier_mask_drops_isolated_point():
    rng = np.random.default_rng(2)
    blob = rng.normal(scale=0.05, size=(200, 3))
    pts = np.vstack([blob, [[5.0, 5.0, 5.0]]])
    keep = outlier_mask(pts, 16, 2.0)
    assert not keep[-1]


def test_outlier_mask_small_sets_untouched():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    assert outlier_mask(pts, 16, 2.0).all()


@pytest.mark.parametrize("seed", range(10))
def test_filter_outliers_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1, 1, size=(4, 3))
    blobs = [c + rng.normal(scale=0.1, size=(100, 3)) for c in centers]
    strays = rng.uniform(-5, 5, size=(6, 3))
    cloud = _cloud(np.vstack(blobs + [strays]))
    cfg = SpanConfig()
    once = filter_outliers(cloud, cfg)
    twice = filter_outliers(once, cfg)
    assert len(once) < len(cloud)
    np.testing.assert_array_equal(twice.positions, once.positions)


@pytest.mark.parametrize("seed", range(5))
def test_select_observed_is_invariant_under_translation(seed):
    rng = np.random.default_rng(seed)
    n = 300
    cloud = KeypointCloud(rng.uniform(-2.5, 2.5, size=(n, 3)), np.ones(n), rng.integers(0, 2, n) * 0.1)
    pose = _random_pose(seed)
    shift = np.array([3.0, -7.5, 12.0])
    moved = KeypointCloud(cloud.positions + shift, cloud.inv_dist_variance, cloud.observed_at)
    moved_pose = Pose(pose.rotation, pose.translation + shift)
    cfg = SpanConfig(cube_length_m=3.2)
    before = select_observed(cloud, pose, 0.1, cfg, 0.1)
    after = select_observed(moved, moved_pose, 0.1, cfg, 0.1)
    assert len(before) == len(after)
    np.testing.assert_allclose(after.positions - shift, before.positions, atol=1e-9)


class TestBruteForceOracles:
    """Selection, classification and voxelization agree with quadratic oracles."""

    @pytest.mark.parametrize("seed", range(20))
    def test_select_observed_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 400))
        cloud = KeypointCloud(
            rng.uniform(-2.5, 2.5, size=(n, 3)),
            rng.uniform(0, 1, n),
            rng.integers(0, 3, n) * 0.1,
        )
        pose = _random_pose(seed)
        cfg = SpanConfig(cube_length_m=3.2, outlier_neighbors=int(rng.integers(1, 16)))
        got = select_observed(cloud, pose, 0.1, cfg, 0.1)
        expected = _oracle_select(cloud, pose, 0.1, cfg, 0.1)
        np.testing.assert_array_equal(got.positions, expected)

    @pytest.mark.parametrize("seed", range(20))
    def test_classify_span_matches_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        pts = rng.normal(size=(int(rng.integers(1, 500)), 3))
        pose = _random_pose(seed)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        theta = float(rng.uniform(1, 170))
        got = classify_span(_cloud(pts), pose, axis, theta)
        np.testing.assert_array_equal(got.positions, pts[_oracle_cone(pts, pose, axis, theta)])


# ── Stream alignment ─────────────────────────────────────────────────────

def test_align_streams_pairs_frames_and_drops_unmatched():
    q = np.array([[1.0, 0, 0, 0]] * 3)
    traj = Trajectory(np.array([0.0, 0.1, 0.2]), q, np.zeros((3, 3)))
    gaze = GazeStream(np.array([0.0, 0.1, 0.2]), np.tile([0, 0, 1.0], (3, 1)))
    cloud = _cloud([[0, 0, 1], [0, 0, 2], [0, 0, 3]], times=[0.0, 0.1, 0.5])
    diag = SpanDiagnostics()
    bundles = align_streams(cloud, traj, gaze, 0.1, diag)
    assert [b.tick for b in bundles] == [0, 1, 2]
    assert [len(b.points) for b in bundles] == [1, 1, 0]
    assert diag.dropped_frames == [pytest.approx(0.5)]


def _still_trajectory(times) -> Trajectory:
    n = len(times)
    return Trajectory(np.asarray(times, dtype=np.float64), np.tile([1.0, 0, 0, 0], (n, 1)), np.zeros((n, 3)))


def test_align_streams_pairs_gaze_offset_by_a_quarter_quantum():
    q = 0.1
    ticks = np.arange(10)
    gaze = GazeStream(ticks * q + q / 4, np.tile([0, 0, 1.0], (10, 1)))
    cloud = _cloud(np.ones((10, 3)), times=ticks * q)
    bundles = align_streams(cloud, _still_trajectory(ticks * q), gaze, q)
    assert [b.tick for b in bundles] == ticks.tolist()
    np.testing.assert_allclose([b.gaze.at for b in bundles], gaze.times)
    assert all(len(b.points) == 1 for b in bundles)


@pytest.mark.parametrize("seed", range(10))
def test_align_streams_matches_nearest_timestamp_oracle(seed):
    rng = np.random.default_rng(seed)
    q = 0.1
    n = 40
    pose_times = np.arange(n) * q + rng.uniform(-0.3 * q, 0.3 * q, n)
    gaze_times = np.sort(np.arange(n) * q + rng.uniform(-0.8 * q, 0.8 * q, n))
    gaze_times = gaze_times[rng.random(n) > 0.2]
    point_times = rng.uniform(-q, (n + 1) * q, 200)
    cloud = _cloud(rng.normal(size=(200, 3)), times=point_times)
    gaze = GazeStream(gaze_times, np.tile([0, 0, 1.0], (len(gaze_times), 1)))
    bundles = align_streams(cloud, _still_trajectory(pose_times), gaze, q)

    expected = {}
    for tick in sorted(set(np.rint(point_times / q).astype(int)) | set(np.rint(pose_times / q).astype(int))):
        t = tick * q
        p = int(np.argmin(np.abs(pose_times - t)))
        g = int(np.argmin(np.abs(gaze_times - t)))
        if abs(pose_times[p] - t) <= q / 2 + 1e-9 and abs(gaze_times[g] - t) <= q / 2 + 1e-9:
            expected[tick] = (pose_times[p], gaze_times[g], int(np.sum(np.rint(point_times / q) == tick)))
    got = {b.tick: (b.pose.at, b.gaze.at, len(b.points)) for b in bundles}
    assert got == expected


def test_align_streams_requires_pose_and_gaze():
    empty_traj = Trajectory(np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)))
    gaze = GazeStream(np.array([0.0]), np.array([[0, 0, 1.0]]))
    with pytest.raises(ValueError):
        align_streams(KeypointCloud.empty(), empty_traj, gaze, 0.1)


def test_frame_quantum_defaults_follow_configuration():
    for fn in (select_observed, lift_frame, build_multilevel, generate):
        assert inspect.signature(fn).parameters["frame_quantum"].default == FRAME_QUANTUM_S, fn.__name__
