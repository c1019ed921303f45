from __future__ import annotations

import pytest

from src.cli.bench import MIN_WINDOWS, STAGES, _windows, bench, build_report, densify, format_table, summarize
from src.core.errors import InsufficientDataError
from src.core.models import ModelConfig
from src.core.network import build_model

BENCH_MODEL = ModelConfig(feature_dim=8, encoder_widths=(2, 4, 4), layers=1, heads=2, resolution=8, frames=2)


def test_summary_in_milliseconds():
    s = summarize([1_000_000, 3_000_000])
    assert s.mean_ms == pytest.approx(2.0)
    assert s.std_ms == pytest.approx(1.0)
    assert 2.0 < s.p95_ms <= 3.0


def test_real_time_factor():
    ms = {"point_preprocessing": 12.5, "span_localization": 3.741, "voxelization": 5.0, "model_inference": 50.0}
    timings = {name: [int(v * 1e6)] * 3 for name, v in ms.items()}
    report = build_report(timings, 2.0, [100, 200, 300])
    assert report.total_mean_ms == pytest.approx(71.241)
    assert report.real_time_factor == pytest.approx(71.241 / 2000.0)
    assert report.windows == 3
    assert report.mean_points_per_window == pytest.approx(200.0)
    table = format_table(report)
    assert "Model inference" in table and "Real-time factor" in table


def test_densify(streams):
    assert densify(streams, 1.0) is streams
    assert len(densify(streams, 2.0, seed=1).points) == 2 * len(streams.points)
    assert len(densify(streams, 0.5, seed=1).points) == round(0.5 * len(streams.points))


def test_windows_cover_recording(streams, sample_spec):
    windows = _windows(streams, sample_spec)
    assert len(windows) == 9
    assert all(w[-1].tick - w[0].tick < 20 for w in windows)


def test_requires_minimum_windows(streams, sample_spec):
    with pytest.raises(InsufficientDataError):
        bench(streams, sample_spec, build_model(BENCH_MODEL), MIN_WINDOWS - 1, 0)


def test_stage_times_add_up(streams, sample_spec):
    report = bench(streams, sample_spec, build_model(BENCH_MODEL), MIN_WINDOWS, warmup=2)
    assert report.windows == MIN_WINDOWS
    assert set(report.stages) == set(STAGES)
    assert report.total_mean_ms == pytest.approx(sum(s.mean_ms for s in report.stages.values()))
    assert report.real_time_factor == pytest.approx(report.total_mean_ms / 2000.0)
    assert report.mean_points_per_window > 0


def test_doubling_points_slows_preprocessing(streams, sample_spec):
    model = build_model(BENCH_MODEL)
    base = bench(streams, sample_spec, model, MIN_WINDOWS, warmup=2)
    dense = bench(densify(streams, 2.0, seed=1), sample_spec, model, MIN_WINDOWS, warmup=2)
    assert dense.mean_points_per_window == pytest.approx(2 * base.mean_points_per_window, rel=0.05)
    assert dense.stages["point_preprocessing"].mean_ms > base.stages["point_preprocessing"].mean_ms
