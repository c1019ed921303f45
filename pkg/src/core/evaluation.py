"""Evaluation of forecasters over a sample split and report emission."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import orjson

from ..config import FOVS_THREADS
from .baselines import GlobalPrior, baseline_persistence
from .dataset import SpanSample
from .errors import InsufficientDataError
from .metrics import both_empty, foveal_distance_stats, grid_metrics
from .models import DistanceStats, LevelMetrics, MetricReport
from .network import Forecast, SpanForecaster
from .training import predict_batch

logger = logging.getLogger(__name__)

ForecastFn = Callable[[Sequence[SpanSample]], List[Forecast]]

_METRICS = ("iou", "f1", "precision", "recall")


def model_forecaster(model: SpanForecaster, threshold: float = 0.5, batch_size: int = 32) -> ForecastFn:
    def run(samples: Sequence[SpanSample]) -> List[Forecast]:
        out: List[Forecast] = []
        for start in range(0, len(samples), batch_size):
            out.extend(predict_batch(model, samples[start:start + batch_size], threshold))
        return out

    return run


def prior_forecaster(prior: GlobalPrior) -> ForecastFn:
    return lambda samples: [prior.forecast(s) for s in samples]


def persistence_forecaster(threshold: float = 0.5) -> ForecastFn:
    return lambda samples: [baseline_persistence(s, threshold=threshold) for s in samples]


@dataclass(frozen=True)
class SampleMetrics:
    sample_id: str
    levels: Dict[str, LevelMetrics]
    both_empty: Dict[str, bool]
    foveal_distance_cm: Optional[DistanceStats]


def score_sample(forecast: Forecast, sample: SpanSample) -> SampleMetrics:
    predicted = forecast.binarized()
    levels, empty = {}, {}
    for level in forecast.levels:
        pred, truth = predicted[level], sample.target[level]
        levels[level] = grid_metrics(pred, truth)
        empty[level] = both_empty(pred, truth)
    distance = None
    if "foveal" in predicted:
        distance = foveal_distance_stats(predicted["foveal"], sample.target["foveal"])
    return SampleMetrics(sample.sample_id, levels, empty, distance)


def per_sample_metrics(
    forecaster: ForecastFn, samples: Sequence[SpanSample], threads: Optional[int] = None
) -> List[SampleMetrics]:
    forecasts = forecaster(samples)
    with ThreadPoolExecutor(max_workers=max(1, threads or FOVS_THREADS)) as pool:
        return list(pool.map(score_sample, forecasts, samples))


def aggregate(records: Sequence[SampleMetrics]) -> MetricReport:
    """Arithmetic means in sample order; samples without both foveal sets are excluded from distances."""
    if not records:
        raise InsufficientDataError("cannot aggregate an empty split")
    levels = list(records[0].levels)
    means = {
        level: LevelMetrics(
            **{m: float(np.mean([getattr(r.levels[level], m) for r in records])) for m in _METRICS}
        )
        for level in levels
    }
    flagged = {level: sum(r.both_empty[level] for r in records) for level in levels}
    distances = [r.foveal_distance_cm for r in records if r.foveal_distance_cm is not None]
    summary = None
    if distances:
        summary = DistanceStats(
            min=float(np.mean([d.min for d in distances])),
            avg=float(np.mean([d.avg for d in distances])),
            max=float(np.mean([d.max for d in distances])),
        )
    for level, count in flagged.items():
        if count:
            logger.warning("%s: %d of %d samples have empty prediction and truth (scored 1)", level, count, len(records))
    return MetricReport(
        levels=means,
        foveal_distance_cm=summary,
        sample_count=len(records),
        dropped_count=len(records) - len(distances),
        both_empty=flagged,
    )


def evaluate(forecaster: ForecastFn, samples: Sequence[SpanSample], threads: Optional[int] = None) -> MetricReport:
    if not samples:
        raise InsufficientDataError("evaluation split is empty")
    report = aggregate(per_sample_metrics(forecaster, samples, threads))
    logger.info(
        "evaluated %d samples: %s",
        report.sample_count,
        " ".join(f"{k}.iou={v.iou:.3f}" for k, v in report.levels.items()),
    )
    return report


# ---------------------------- reports ---------------------------- #

def report_rows(report: MetricReport) -> List[List]:
    rows: List[List] = [["level", "metric", "value"]]
    for level, metrics in report.levels.items():
        rows.extend([level, m, getattr(metrics, m)] for m in _METRICS)
        rows.append([level, "both_empty", report.both_empty.get(level, 0)])
    if report.foveal_distance_cm is not None:
        d = report.foveal_distance_cm
        rows.extend(["foveal_distance_cm", k, v] for k, v in (("min", d.min), ("avg", d.avg), ("max", d.max)))
    rows.append(["all", "sample_count", report.sample_count])
    rows.append(["all", "dropped_count", report.dropped_count])
    return rows


def write_report(report: MetricReport, path, fmt: str = "json") -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        out.write_bytes(orjson.dumps(report.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
    elif fmt == "csv":
        with open(out, "w", newline="", encoding="utf-8") as f:
            csv.writer(f).writerows(report_rows(report))
    else:
        raise ValueError(f"unknown report format '{fmt}' (expected csv or json)")
    logger.info("wrote %s report to %s", fmt, out)
    return out
