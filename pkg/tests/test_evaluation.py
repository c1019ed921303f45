from __future__ import annotations

import csv

import numpy as np
import orjson
import pytest

from src.core.baselines import baseline_global_prior
from src.core.errors import InsufficientDataError
from src.core.evaluation import (
    aggregate,
    evaluate,
    per_sample_metrics,
    persistence_forecaster,
    prior_forecaster,
    report_rows,
    score_sample,
    write_report,
)
from src.core.models import LEVELS
from src.core.network import Forecast


def _oracle(samples):
    return [
        Forecast(s.target_array(), LEVELS, s.origin, s.cube_length_m, s.resolution) for s in samples
    ]


def test_oracle_scores_perfectly(samples):
    report = evaluate(_oracle, samples, threads=2)
    assert report.sample_count == len(samples)
    for level in LEVELS:
        assert report.levels[level].iou == pytest.approx(1.0)
        assert report.levels[level].f1 == pytest.approx(1.0)


def test_persistence_report(samples):
    report = evaluate(persistence_forecaster(), samples, threads=2)
    assert set(report.levels) == set(LEVELS)
    for metrics in report.levels.values():
        assert 0.0 <= metrics.iou <= metrics.f1 <= 1.0
    assert report.dropped_count + sum(
        1 for r in per_sample_metrics(persistence_forecaster(), samples, 1) if r.foveal_distance_cm
    ) == len(samples)


def test_aggregate_is_mean_of_samples(samples):
    records = per_sample_metrics(prior_forecaster(baseline_global_prior(samples)), samples, threads=2)
    report = aggregate(records)
    for level in LEVELS:
        assert report.levels[level].iou == pytest.approx(np.mean([r.levels[level].iou for r in records]))
        assert report.both_empty[level] == sum(r.both_empty[level] for r in records)


def test_empty_prediction_excluded_from_distances(samples):
    sample = samples[0]
    blank = Forecast(np.zeros((4,) + (sample.resolution,) * 3), LEVELS, sample.origin, sample.cube_length_m,
                     sample.resolution)
    record = score_sample(blank, sample)
    assert record.foveal_distance_cm is None
    report = aggregate([record])
    assert report.dropped_count == 1
    assert report.foveal_distance_cm is None


def test_empty_split():
    with pytest.raises(InsufficientDataError):
        aggregate([])
    with pytest.raises(InsufficientDataError):
        evaluate(_oracle, [])


def test_write_report(tmp_path, samples):
    report = evaluate(persistence_forecaster(), samples, threads=1)
    data = orjson.loads(write_report(report, tmp_path / "r.json").read_bytes())
    assert data["sample_count"] == len(samples)
    assert set(data["levels"]) == set(LEVELS)

    with open(write_report(report, tmp_path / "r.csv", fmt="csv"), newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["level", "metric", "value"]
    assert len(rows) == len(report_rows(report))
    assert ["all", "sample_count", str(len(samples))] in rows

    with pytest.raises(ValueError):
        write_report(report, tmp_path / "r.xml", fmt="xml")
