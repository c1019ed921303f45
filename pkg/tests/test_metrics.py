from __future__ import annotations

import numpy as np
import pytest

from src.core.errors import GeometryMismatchError
from src.core.metrics import both_empty, dense_iou, foveal_distance_stats, grid_metrics, set_metrics
from src.core.voxel import OccupancyGrid

ORIGIN = (0.0, 0.0, 0.0)


def _grid(cells, r=16, length=3.2, origin=ORIGIN) -> OccupancyGrid:
    dense = np.zeros((r, r, r), dtype=bool)
    for c in cells:
        dense[c] = True
    return OccupancyGrid.from_dense(dense, length, origin)


# ── Set metrics ──────────────────────────────────────────────────────────

def test_set_metrics_from_counts():
    m = set_metrics(overlap=2, predicted=4, actual=3)
    assert m.iou == pytest.approx(2 / 5)
    assert m.precision == pytest.approx(0.5)
    assert m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(4 / 7)


def test_both_empty_scores_one():
    m = grid_metrics(_grid([]), _grid([]))
    assert (m.iou, m.f1, m.precision, m.recall) == (1.0, 1.0, 1.0, 1.0)
    assert both_empty(_grid([]), _grid([]))


def test_one_side_empty_scores_zero():
    for pred, truth in ((_grid([]), _grid([(1, 1, 1)])), (_grid([(1, 1, 1)]), _grid([]))):
        m = grid_metrics(pred, truth)
        assert (m.iou, m.f1, m.precision, m.recall) == (0.0, 0.0, 0.0, 0.0)
        assert not both_empty(pred, truth)


def test_grid_metrics_counts_cells():
    pred = _grid([(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)])
    truth = _grid([(0, 0, 0), (1, 0, 0), (9, 9, 9)])
    assert grid_metrics(pred, truth) == set_metrics(2, 4, 3)


def test_metrics_require_shared_geometry():
    with pytest.raises(GeometryMismatchError):
        grid_metrics(_grid([(0, 0, 0)]), _grid([(0, 0, 0)], origin=(1.0, 0.0, 0.0)))


def test_dense_iou():
    a = np.zeros((4, 4, 4), bool)
    b = np.zeros((4, 4, 4), bool)
    a[0, 0, :2] = True
    b[0, 0, 1:3] = True
    assert dense_iou(a, b) == pytest.approx(1 / 3)


# ── Foveal distances ─────────────────────────────────────────────────────

def test_distance_between_single_cells_in_cm():
    stats = foveal_distance_stats(_grid([(0, 0, 0)]), _grid([(0, 0, 2)]))
    assert stats.min == pytest.approx(40.0)
    assert stats.avg == pytest.approx(40.0)
    assert stats.max == pytest.approx(40.0)


def test_adjacent_cells_are_one_edge_apart():
    stats = foveal_distance_stats(_grid([(3, 3, 3)]), _grid([(3, 4, 3)]))
    assert stats.min == pytest.approx(20.0)


def test_chamfer_mean_and_hausdorff_are_symmetric():
    pred = _grid([(0, 0, 0)])
    truth = _grid([(0, 0, 0), (0, 0, 3)])
    stats = foveal_distance_stats(pred, truth)
    assert stats.min == pytest.approx(0.0)
    assert stats.avg == pytest.approx(0.5 * (0.0 + 1.5) * 20.0)
    assert stats.max == pytest.approx(60.0)
    flipped = foveal_distance_stats(truth, pred)
    assert flipped.avg == pytest.approx(stats.avg)
    assert flipped.max == pytest.approx(stats.max)


def test_distance_undefined_for_empty_side():
    assert foveal_distance_stats(_grid([]), _grid([(0, 0, 0)])) is None
    assert foveal_distance_stats(_grid([(0, 0, 0)]), _grid([])) is None
