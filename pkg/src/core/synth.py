"""Deterministic synthetic egocentric recordings with exact span ground truth.

The generator places clustered "objects" and sparse wall points in a box room,
walks an agent along waypoints, and scripts where it looks. Every frame it
emits the keypoints visible inside the head's orientation cone (after a coarse
angular z-buffer), plus the exact per-level classification of those points.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config import FRAME_QUANTUM_S
from .geometry import look_rotation, slerp
from .models import (
    LEVELS,
    BehaviorSpec,
    ClusterSpec,
    GazeStream,
    KeypointCloud,
    Pose,
    SceneSpec,
    SpanConfig,
    Streams,
    Trajectory,
)

logger = logging.getLogger(__name__)


# ---------------------------- ground truth ---------------------------- #

@dataclass(frozen=True, eq=False)
class FrameTruth:
    time: float
    pose: Pose
    gaze_world: np.ndarray
    points: KeypointCloud          # keypoints emitted in this frame
    in_cube: np.ndarray            # spatial filter mask
    levels: Dict[str, np.ndarray]  # per-level membership masks (in_cube applied)

    def level_points(self, level: str) -> KeypointCloud:
        return self.points.subset(self.levels[level])

    def scene_points(self) -> KeypointCloud:
        return self.points.subset(self.in_cube)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    frames: List[FrameTruth]
    coverage: Dict[str, float]


# ---------------------------- scene sampling ---------------------------- #

def _sphere_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cluster_offsets(rng: np.random.Generator, spec: ClusterSpec) -> np.ndarray:
    dirs = _sphere_directions(rng, spec.point_count)
    radii = spec.radius + spec.surface_noise_m * rng.standard_normal(spec.point_count)
    return dirs * radii[:, None]


def _clip_to_room(points: np.ndarray, scene: SceneSpec) -> np.ndarray:
    ex, ey, ez = scene.room_extent_m
    lo = np.array([-ex / 2, -ey / 2, 0.0])
    hi = np.array([ex / 2, ey / 2, ez])
    return np.clip(points, lo, hi)


def _wall_points(rng: np.random.Generator, scene: SceneSpec) -> np.ndarray:
    ex, ey, ez = scene.room_extent_m
    faces = [
        # (fixed axis, fixed value, extent of the two free axes)
        (2, 0.0, (ex, ey)),
        (2, ez, (ex, ey)),
        (0, -ex / 2, (ey, ez)),
        (0, ex / 2, (ey, ez)),
        (1, -ey / 2, (ex, ez)),
        (1, ey / 2, (ex, ez)),
    ]
    chunks = []
    for axis, value, (a, b) in faces:
        n = int(round(scene.wall_point_density * a * b))
        if n == 0:
            continue
        uv = rng.random((n, 2))
        pts = np.empty((n, 3))
        free = [i for i in range(3) if i != axis]
        for col, ax in enumerate(free):
            span = (ex, ey, ez)[ax]
            low = 0.0 if ax == 2 else -span / 2
            pts[:, ax] = low + uv[:, col] * span
        pts[:, axis] = value
        chunks.append(pts)
    return np.concatenate(chunks) if chunks else np.zeros((0, 3))


def _path_position(path: np.ndarray, fraction: float) -> np.ndarray:
    if len(path) == 1:
        return path[0]
    knots = np.linspace(0.0, 1.0, len(path))
    return np.array([np.interp(fraction, knots, path[:, i]) for i in range(3)])


def _walk_position(waypoints: np.ndarray, speed: float, t: float) -> np.ndarray:
    if len(waypoints) == 1 or speed == 0:
        return waypoints[0]
    seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    s = min(speed * t, arc[-1])
    return np.array([np.interp(s, arc, waypoints[:, i]) for i in range(3)])


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    return math.degrees(math.acos(float(np.clip(a @ b, -1.0, 1.0))))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("gaze target coincides with the eye position")
    return v / n


# ---------------------------- validation ---------------------------- #

def validate_specs(scene: SceneSpec, behavior: BehaviorSpec) -> None:
    targets = len(scene.object_clusters) + len(scene.dynamic_objects)
    for step in behavior.gaze_program:
        if step.target >= targets:
            raise ValueError(f"gaze target {step.target} does not exist ({targets} objects)")
    for i, cluster in enumerate(scene.object_clusters):
        if not scene.contains(cluster.center):
            raise ValueError(f"object cluster {i} center {cluster.center} lies outside the room")
    for i, obj in enumerate(scene.dynamic_objects):
        if not all(scene.contains(p) for p in obj.path):
            raise ValueError(f"dynamic object {i} path leaves the room")
    if not all(scene.contains(p) for p in behavior.walk.waypoints):
        raise ValueError("walk waypoints must lie inside the room")


# ---------------------------- generator ---------------------------- #

class _World:
    def __init__(self, scene: SceneSpec, duration: float):
        rng = np.random.default_rng(scene.seed)
        self.scene = scene
        self.duration = duration
        static = [_clip_to_room(np.asarray(c.center) + _cluster_offsets(rng, c), scene) for c in scene.object_clusters]
        static.append(_wall_points(rng, scene))
        self.static = np.concatenate(static) if static else np.zeros((0, 3))
        self.dynamic = [
            (np.asarray(obj.path, dtype=np.float64), _cluster_offsets(rng, obj.cluster))
            for obj in scene.dynamic_objects
        ]

    def dynamic_center(self, index: int, t: float) -> np.ndarray:
        path, _ = self.dynamic[index]
        return _path_position(path, t / self.duration if self.duration else 0.0)

    def target(self, index: int, t: float) -> np.ndarray:
        clusters = self.scene.object_clusters
        if index < len(clusters):
            return np.asarray(clusters[index].center, dtype=np.float64)
        return self.dynamic_center(index - len(clusters), t)

    def points_at(self, t: float) -> np.ndarray:
        moving = [
            _clip_to_room(self.dynamic_center(i, t) + offsets, self.scene)
            for i, (_, offsets) in enumerate(self.dynamic)
        ]
        return np.concatenate([self.static, *moving]) if moving else self.static


def _gaze_direction(world: _World, behavior: BehaviorSpec, eye: np.ndarray, t: float) -> np.ndarray:
    start = 0.0
    prev: Optional[int] = None
    for step in behavior.gaze_program:
        fix_start = start + step.saccade_s
        end = fix_start + step.fixation_s
        if t < end:
            target = _unit(world.target(step.target, t) - eye)
            if t < fix_start and prev is not None:
                origin = _unit(world.target(prev, t) - eye)
                return slerp(origin, target, (t - start) / step.saccade_s)
            return target
        prev = step.target
        start = end
    return _unit(world.target(behavior.gaze_program[-1].target, t) - eye)


def _visible(local: np.ndarray, scene: SceneSpec, theta_deg: float) -> np.ndarray:
    depth = np.linalg.norm(local, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cone = (local[:, 2] / depth) > math.cos(math.radians(theta_deg))
    cone &= depth > 0
    idx = np.flatnonzero(cone)
    if not len(idx):
        return cone
    v = local[idx]
    az = np.degrees(np.arctan2(v[:, 0], v[:, 2]))
    el = np.degrees(np.arctan2(v[:, 1], np.hypot(v[:, 0], v[:, 2])))
    bins = np.floor(az / scene.occlusion_bin_deg).astype(np.int64) * 100_003 + np.floor(
        el / scene.occlusion_bin_deg
    ).astype(np.int64)
    keys, inverse = np.unique(bins, return_inverse=True)
    nearest = np.full(len(keys), np.inf)
    np.minimum.at(nearest, inverse, depth[idx])
    front = depth[idx] <= nearest[inverse] + scene.occlusion_depth_tol_m
    visible = np.zeros(len(local), dtype=bool)
    visible[idx[front]] = True
    return visible


def _ball_jitter(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    if radius == 0 or n == 0:
        return np.zeros((n, 3))
    dirs = _sphere_directions(rng, n)
    return dirs * (radius * rng.random(n) ** (1 / 3))[:, None]


def _truth_masks(
    points: np.ndarray, eye: np.ndarray, gaze_world: np.ndarray, head: np.ndarray, cfg: SpanConfig
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    rel = points - eye
    cube = np.all(np.abs(rel) < cfg.cube_length_m / 2, axis=1)
    norm = np.linalg.norm(rel, axis=1)
    levels = {}
    for level in LEVELS:
        axis = head if level == "orientation" else gaze_world
        with np.errstate(invalid="ignore", divide="ignore"):
            cosine = (rel @ axis) / norm
        theta = cfg.eccentricities_deg.of(level)
        levels[level] = cube & (norm > 0) & (cosine > math.cos(math.radians(theta)))
    return cube, levels


def generate(
    scene: SceneSpec,
    behavior: BehaviorSpec,
    frame_quantum: float = FRAME_QUANTUM_S,
    cfg: Optional[SpanConfig] = None,
    recording_id: Optional[str] = None,
    tag: str = "",
) -> Tuple[Streams, GroundTruth]:
    validate_specs(scene, behavior)
    cfg = cfg or SpanConfig()
    world = _World(scene, behavior.duration_s)
    jitter_rng = np.random.default_rng([scene.seed, behavior.seed])
    waypoints = np.asarray(behavior.walk.waypoints, dtype=np.float64)
    theta_o = cfg.eccentricities_deg.orientation

    n_frames = int(round(behavior.duration_s / frame_quantum))
    poses: List[Pose] = []
    gaze_dirs: List[np.ndarray] = []
    clouds: List[KeypointCloud] = []
    frames: List[FrameTruth] = []
    head: Optional[np.ndarray] = None

    for f in range(n_frames):
        t = f * frame_quantum
        eye = _walk_position(waypoints, behavior.walk.speed_mps, t)
        gaze_world = _gaze_direction(world, behavior, eye, t)
        if head is None:
            head = gaze_world.copy()
        lag = _angle(head, gaze_world)
        if lag > behavior.head_lag_deg:
            head = slerp(gaze_world, head, behavior.head_lag_deg / lag)
        rotation = look_rotation(head)
        pose = Pose.from_matrix(rotation, eye, t)
        gaze_local = rotation.T @ gaze_world
        gaze_dirs.append(gaze_local / np.linalg.norm(gaze_local))
        poses.append(pose)

        all_points = world.points_at(t)
        visible = _visible((all_points - eye) @ rotation, scene, theta_o)
        emitted = all_points[visible]
        emitted = _clip_to_room(emitted + _ball_jitter(jitter_rng, len(emitted), scene.jitter_m), scene)
        depth = np.linalg.norm(emitted - eye, axis=1)
        cloud = KeypointCloud(emitted, 1e-4 * depth**2, np.full(len(emitted), t))
        clouds.append(cloud)

        cube, levels = _truth_masks(emitted, eye, gaze_world, head, cfg)
        frames.append(FrameTruth(t, pose, gaze_world, cloud, cube, levels))

    coverage = {
        level: float(np.mean([frame.levels[level].any() for frame in frames])) if frames else 0.0
        for level in LEVELS
    }
    logger.info(
        "generated %d frames, %d keypoints; coverage %s",
        n_frames,
        sum(len(c) for c in clouds),
        ", ".join(f"{k}={v:.3f}" for k, v in coverage.items()),
    )
    streams = Streams(
        points=KeypointCloud.concat(clouds),
        trajectory=Trajectory.from_poses(poses),
        gaze=GazeStream(np.array([p.at for p in poses]), np.array(gaze_dirs).reshape(-1, 3)),
        recording_id=recording_id or f"synth-{scene.seed}-{behavior.seed}",
        tag=tag,
    )
    return streams, GroundTruth(frames, coverage)


# ---------------------------- outliers ---------------------------- #

def inject_outliers(
    points: KeypointCloud, rate: float, magnitude_m: float, seed: int
) -> Tuple[KeypointCloud, np.ndarray]:
    """Append ⌈rate·N⌉ isolated points at least `magnitude_m` away from every input point.

    Returns the augmented cloud (time-sorted) and a mask tagging injected rows.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    n = len(points)
    count = math.ceil(round(rate * n, 9))
    if count == 0:
        return points, np.zeros(n, dtype=bool)
    rng = np.random.default_rng(seed)
    centroid = points.positions.mean(axis=0)
    reach = np.linalg.norm(points.positions - centroid, axis=1).max()
    radius = reach + magnitude_m * (1.0 + rng.random(count))
    extra = centroid + _sphere_directions(rng, count) * radius[:, None]
    times = points.observed_at[rng.integers(0, n, count)]
    merged = KeypointCloud.concat(
        [points, KeypointCloud(extra, np.zeros(count), times)]
    )
    tags = np.concatenate([np.zeros(n, dtype=bool), np.ones(count, dtype=bool)])
    order = np.argsort(merged.observed_at, kind="stable")
    return merged.subset(order), tags[order]


def with_duration(behavior: BehaviorSpec, duration_s: float) -> BehaviorSpec:
    """Shorten (or lengthen) a behavior, trimming the gaze program to fit."""
    steps, used = [], 0.0
    for step in behavior.gaze_program:
        length = step.saccade_s + step.fixation_s
        if used + length > duration_s + 1e-9:
            room = duration_s - used - step.saccade_s
            if room > 0:
                steps.append(step.model_copy(update={"fixation_s": room}))
            break
        steps.append(step)
        used += length
    if not steps:
        raise ValueError(f"duration {duration_s}s is too short for the first gaze step")
    return BehaviorSpec.model_validate(
        {**behavior.model_dump(), "duration_s": duration_s, "gaze_program": [s.model_dump() for s in steps]}
    )
