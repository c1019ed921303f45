"""Set metrics and metric-distance statistics over occupancy grids."""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .models import DistanceStats, LevelMetrics
from .voxel import OccupancyGrid

logger = logging.getLogger(__name__)

CM_PER_M = 100.0


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def set_metrics(overlap: int, predicted: int, actual: int) -> LevelMetrics:
    """IoU/F1/precision/recall from counts; two empty sets score 1."""
    if predicted == 0 and actual == 0:
        return LevelMetrics(iou=1.0, f1=1.0, precision=1.0, recall=1.0)
    precision = _ratio(overlap, predicted)
    recall = _ratio(overlap, actual)
    return LevelMetrics(
        iou=_ratio(overlap, predicted + actual - overlap),
        f1=_ratio(2 * precision * recall, precision + recall),
        precision=precision,
        recall=recall,
    )


def grid_metrics(pred: OccupancyGrid, truth: OccupancyGrid) -> LevelMetrics:
    pred.check_geometry(truth)
    return set_metrics((pred & truth).count(), pred.count(), truth.count())


def both_empty(pred: OccupancyGrid, truth: OccupancyGrid) -> bool:
    return pred.is_empty() and truth.is_empty()


def dense_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    return set_metrics(int(np.count_nonzero(pred & truth)), int(pred.sum()), int(truth.sum())).iou


def _directed(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    distances, _ = cKDTree(b).query(a, k=1)
    return distances


def foveal_distance_stats(pred: OccupancyGrid, truth: OccupancyGrid) -> Optional[DistanceStats]:
    """(min pairwise, symmetric Chamfer mean, Hausdorff) between cell centers, in cm.

    Returns None when either grid is empty.
    """
    pred.check_geometry(truth)
    if pred.is_empty() or truth.is_empty():
        return None
    scale = pred.cell_edge_m * CM_PER_M
    p, t = pred.cells().astype(np.float64), truth.cells().astype(np.float64)
    forward, backward = _directed(p, t), _directed(t, p)
    return DistanceStats(
        min=float(forward.min()) * scale,
        avg=0.5 * (float(forward.mean()) + float(backward.mean())) * scale,
        max=max(float(forward.max()), float(backward.max())) * scale,
    )

