"""2D gaze anticipation: back-project the forecast foveal span onto the image plane."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .geometry import slerp
from .models import CameraModel, GazeSample, Pose
from .network import Forecast

logger = logging.getLogger(__name__)

FOVEAL_TOLERANCE_DEG = 2.0


class Score2D(BaseModel):
    f1: float
    precision: float
    recall: float


@dataclass(frozen=True, eq=False)
class Projection2D:
    points: np.ndarray        # (n_steps, 2) pixels; NaN where out of frame
    in_frame: np.ndarray      # (n_steps,) bool
    target_local: np.ndarray  # unit direction of the argmax cell in the head frame
    target_cell: tuple


def default_radius_px(cam: CameraModel, degrees: float = FOVEAL_TOLERANCE_DEG) -> float:
    return cam.focal_px * math.tan(math.radians(degrees))


def project_directions(cam: CameraModel, directions: np.ndarray) -> tuple:
    """Pinhole projection of local-frame directions; returns (pixels, in_frame)."""
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    (cx, cy), (w, h) = cam.principal_point_px, cam.image_size_px
    ahead = d[:, 2] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = cam.focal_px * d[:, :2] / d[:, 2:3] + np.array([cx, cy])
    inside = ahead & (uv[:, 0] >= 0) & (uv[:, 0] <= w) & (uv[:, 1] >= 0) & (uv[:, 1] <= h)
    uv[~inside] = np.nan
    return uv, inside


def argmax_cell(forecast: Forecast, level: str = "foveal") -> tuple:
    soft = forecast.level(level)
    if soft.max() == soft.min():
        raise ValueError(f"{level} forecast is degenerate (all cells equal)")
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(soft)), soft.shape))


def project_to_2d(
    forecast: Forecast,
    head_pose: Pose,
    cam: CameraModel,
    current_gaze: GazeSample,
    n_steps: int = 1,
    level: str = "foveal",
) -> Projection2D:
    """Argmax cell → head frame → pinhole, interpolated in angle from the current gaze.

    Step k of n lies at fraction k/n, so the last point is the projected target.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    cell = argmax_cell(forecast, level)
    edge = forecast.cube_length_m / forecast.resolution
    center = np.asarray(forecast.origin) + (np.asarray(cell) + 0.5) * edge
    local = head_pose.transform_to_local(center)
    norm = np.linalg.norm(local)
    if local[2] <= 0 or norm == 0:
        logger.debug("argmax cell %s lies behind the camera", cell)
        return Projection2D(np.full((n_steps, 2), np.nan), np.zeros(n_steps, dtype=bool), local / (norm or 1.0), cell)
    target = local / norm
    dirs = np.array([slerp(current_gaze.direction, target, k / n_steps) for k in range(1, n_steps + 1)])
    points, inside = project_directions(cam, dirs)
    return Projection2D(points, inside, target, cell)


def gaze_pixels(cam: CameraModel, gaze: Sequence[GazeSample]) -> tuple:
    return project_directions(cam, np.array([g.direction for g in gaze]).reshape(-1, 3))


def score_2d(
    pred: np.ndarray,
    truth: np.ndarray,
    cam: CameraModel,
    radius_px: Optional[float] = None,
) -> Score2D:
    """Time-aligned hit scoring; NaN rows are out-of-frame (pred) or missing (truth)."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predicted points vs {len(truth)} truth points")
    radius = default_radius_px(cam) if radius_px is None else radius_px
    has_pred = np.all(np.isfinite(pred), axis=1)
    has_truth = np.all(np.isfinite(truth), axis=1)
    both = has_pred & has_truth
    hits = np.zeros(len(pred), dtype=bool)
    hits[both] = np.linalg.norm(pred[both] - truth[both], axis=1) <= radius
    n_hit = int(hits.sum())
    precision = n_hit / int(has_pred.sum()) if has_pred.any() else 0.0
    recall = n_hit / int(has_truth.sum()) if has_truth.any() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Score2D(f1=f1, precision=precision, recall=recall)
