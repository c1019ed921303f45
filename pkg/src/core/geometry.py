"""Pose algebra, observed-keypoint selection and gaze-cone classification."""
from __future__ import annotations

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..config import FRAME_QUANTUM_S
from .models import (
    FrameBundle,
    GazeStream,
    KeypointCloud,
    Pose,
    SpanConfig,
    SpanDiagnostics,
    Trajectory,
)

logger = logging.getLogger(__name__)

# slack on the outlier limit so equal neighbour distances never split on rounding
_OUTLIER_SLACK = 1e-9
# points closer than this multiple of the median neighbour spacing are never cut
_SPACING_FLOOR = 2.0


# ---------------------------- pose helpers ---------------------------- #

def transform_to_local(pose: Pose, point: np.ndarray) -> np.ndarray:
    """R_tᵀ (p − t_t); accepts one point or an (N, 3) array."""
    return pose.transform_to_local(point)


def transform_to_world(pose: Pose, point: np.ndarray) -> np.ndarray:
    return pose.transform_to_world(point)


def frame_tick(t, frame_quantum: float):
    """Index of the frame quantum a timestamp falls in."""
    return np.rint(np.asarray(t, dtype=np.float64) / frame_quantum).astype(np.int64)


# ---------------------------- selection ---------------------------- #

def neighbor_mean_distances(positions: np.ndarray, k: int) -> np.ndarray:
    """Mean distance of every point to its k nearest neighbours (self excluded)."""
    tree = cKDTree(positions)
    dist, _ = tree.query(positions, k=k + 1)
    return dist[:, 1:].mean(axis=1)


def _outlier_pass(positions: np.ndarray, k: int, std_ratio: float) -> np.ndarray:
    """One statistical cut; True marks points to drop."""
    mean_d = neighbor_mean_distances(positions, k)
    limit = max(mean_d.mean() + std_ratio * mean_d.std(), _SPACING_FLOOR * float(np.median(mean_d)))
    return mean_d > limit + _OUTLIER_SLACK * max(limit, 1.0)


def outlier_mask(positions: np.ndarray, k: int, std_ratio: float) -> np.ndarray:
    """True for points that survive statistical outlier removal.

    A point is cut when its mean k-neighbour distance exceeds both
    mean + std_ratio·std and twice the median of those means. Cuts repeat on
    the survivors until a pass removes nothing, so the result is a fixed point.
    """
    keep = np.ones(len(positions), dtype=bool)
    while True:
        idx = np.flatnonzero(keep)
        if len(idx) <= k:
            return keep
        drop = _outlier_pass(positions[idx], k, std_ratio)
        if not drop.any():
            return keep
        keep[idx[drop]] = False


def filter_outliers(points: KeypointCloud, cfg: SpanConfig) -> KeypointCloud:
    keep = outlier_mask(points.positions, cfg.outlier_neighbors, cfg.outlier_std_ratio)
    if not keep.all():
        logger.debug("outlier filter removed %d of %d points", int((~keep).sum()), len(points))
    return points.subset(keep)


def in_cube(positions: np.ndarray, center: np.ndarray, cube_length: float) -> np.ndarray:
    # max-norm: every axis strictly inside D/2
    return np.all(np.abs(positions - center) < cube_length / 2, axis=1)


def select_observed(
    points: KeypointCloud,
    pose: Pose,
    t: float,
    cfg: SpanConfig,
    frame_quantum: float = FRAME_QUANTUM_S,
    diagnostics: Optional[SpanDiagnostics] = None,
) -> KeypointCloud:
    """Keypoints observed in the frame of `t`, inside the cube around the eye, minus outliers."""
    mask = frame_tick(points.observed_at, frame_quantum) == frame_tick(t, frame_quantum)
    mask &= in_cube(points.positions, pose.translation, cfg.cube_length_m)
    observed = points.subset(mask)
    if not cfg.outlier_filter:
        return observed
    kept = filter_outliers(observed, cfg)
    if diagnostics is not None:
        diagnostics.outliers_removed += len(observed) - len(kept)
    return kept


# ---------------------------- classification ---------------------------- #

def cone_mask(
    local: np.ndarray, axis: np.ndarray, theta_deg: float
) -> Tuple[np.ndarray, int]:
    """Membership of local-frame vectors in the cone around `axis`; also returns zero-length count."""
    axis = np.asarray(axis, dtype=np.float64)
    norms = np.linalg.norm(local, axis=1)
    degenerate = norms == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = (local @ axis) / (norms * np.linalg.norm(axis))
    inside = (cosine > np.cos(np.deg2rad(theta_deg))) & ~degenerate
    return inside, int(degenerate.sum())


def classify_span(
    points: KeypointCloud,
    pose: Pose,
    axis: np.ndarray,
    theta_deg: float,
    diagnostics: Optional[SpanDiagnostics] = None,
) -> KeypointCloud:
    if not 0.0 < theta_deg < 180.0:
        raise ValueError(f"theta_deg must lie in (0, 180), got {theta_deg}")
    inside, degenerate = cone_mask(pose.transform_to_local(points.positions), axis, theta_deg)
    if degenerate:
        logger.debug("%d zero-length points excluded from cone", degenerate)
        if diagnostics is not None:
            diagnostics.degenerate_points += degenerate
    return points.subset(inside)


# ---------------------------- stream alignment ---------------------------- #

def _nearest(times: np.ndarray, query: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(times, query), 1, max(len(times) - 1, 1))
    left = idx - 1
    right = np.minimum(idx, len(times) - 1)
    pick_right = np.abs(times[right] - query) < np.abs(query - times[left])
    return np.where(pick_right, right, left)


def align_streams(
    points: KeypointCloud,
    trajectory: Trajectory,
    gaze: GazeStream,
    frame_quantum: float,
    diagnostics: Optional[SpanDiagnostics] = None,
) -> List[FrameBundle]:
    """Group keypoints by frame quantum and pair each frame with its nearest pose and gaze.

    Frames are the union of the quanta touched by keypoints and by poses, so a
    frame with a pose but no keypoints still yields an (empty) bundle.
    """
    if len(trajectory) == 0 or len(gaze) == 0:
        raise ValueError("pose and gaze streams must be non-empty")
    point_ticks = frame_tick(points.observed_at, frame_quantum)
    ticks = np.union1d(point_ticks, frame_tick(trajectory.times, frame_quantum))
    frame_times = ticks * frame_quantum

    pose_idx = _nearest(trajectory.times, frame_times)
    gaze_idx = _nearest(gaze.times, frame_times)
    tolerance = frame_quantum / 2 + 1e-9
    ok = (np.abs(trajectory.times[pose_idx] - frame_times) <= tolerance) & (
        np.abs(gaze.times[gaze_idx] - frame_times) <= tolerance
    )

    order = np.argsort(point_ticks, kind="stable")
    sorted_ticks = point_ticks[order]
    starts = np.searchsorted(sorted_ticks, ticks, side="left")
    ends = np.searchsorted(sorted_ticks, ticks, side="right")

    bundles: List[FrameBundle] = []
    dropped: List[float] = []
    for i, tick in enumerate(ticks):
        if not ok[i]:
            dropped.append(float(frame_times[i]))
            continue
        bundles.append(
            FrameBundle(
                tick=int(tick),
                time=float(frame_times[i]),
                pose=trajectory.pose(int(pose_idx[i])),
                gaze=gaze.sample(int(gaze_idx[i])),
                points=points.subset(order[starts[i]:ends[i]]),
            )
        )
    if dropped:
        logger.warning("dropped %d frames without pose/gaze within %.3fs", len(dropped), frame_quantum / 2)
        if diagnostics is not None:
            diagnostics.dropped_frames.extend(dropped)
    return bundles


def look_rotation(forward: np.ndarray, up: Sequence[float] = (0.0, 0.0, 1.0)) -> np.ndarray:
    """Local→world rotation whose z-axis is `forward` (x right, y down)."""
    z = np.asarray(forward, dtype=np.float64)
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def slerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    """Constant-angular-speed interpolation between unit vectors `a` (u=0) and `b` (u=1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = float(np.clip(np.dot(a, b), -1.0, 1.0))
    omega = math.acos(dot)
    if omega < 1e-12:
        return a.copy()
    if math.pi - omega < 1e-6:
        # antipodal: the great circle is not unique, rotate about any axis orthogonal to `a`
        side = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        ortho = np.cross(a, side)
        ortho /= np.linalg.norm(ortho)
        angle = u * math.pi
        out = math.cos(angle) * a + math.sin(angle) * ortho
        return out / np.linalg.norm(out)
    out = (math.sin((1 - u) * omega) * a + math.sin(u * omega) * b) / math.sin(omega)
    return out / np.linalg.norm(out)
