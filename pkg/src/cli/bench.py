"""Per-stage latency of the lifting and forecasting pipeline.

Stages match one inference every stride over a t_past window: point
preprocessing (temporal, spatial and outlier selection), span localization
(cone classification), voxelization, and model inference.
"""
from __future__ import annotations

import logging
import sys
import time
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Sequence

import numpy as np
import orjson
import torch
from pydantic import BaseModel

from ..core.errors import InsufficientDataError
from ..core.geometry import align_streams, select_observed
from ..core.loaders import load_preset
from ..core.models import KeypointCloud, ModelConfig, SampleSpec, Streams
from ..core.network import SpanForecaster, build_model
from ..core.synth import generate
from ..core.training import load_checkpoint
from ..core.voxel import LiftedFrame, assemble, classify_levels

if TYPE_CHECKING:
    from .main import RunConfig

logger = logging.getLogger(__name__)

MIN_WINDOWS = 100
STAGES = ("point_preprocessing", "span_localization", "voxelization", "model_inference")
_LABELS = {
    "point_preprocessing": "Point preprocessing",
    "span_localization": "3D visual span localization",
    "voxelization": "Voxelization",
    "model_inference": "Model inference",
}


class StageLatency(BaseModel):
    mean_ms: float
    std_ms: float
    p95_ms: float


class LatencyReport(BaseModel):
    stages: Dict[str, StageLatency]
    total_mean_ms: float
    real_time_factor: float
    window_ms: float
    windows: int
    mean_points_per_window: float


def summarize(samples_ns: Sequence[int]) -> StageLatency:
    ms = np.asarray(samples_ns, dtype=np.float64) / 1e6
    return StageLatency(mean_ms=float(ms.mean()), std_ms=float(ms.std()), p95_ms=float(np.percentile(ms, 95)))


def build_report(timings: Dict[str, List[int]], window_s: float, points: Sequence[int]) -> LatencyReport:
    stages = {name: summarize(timings[name]) for name in STAGES}
    total = sum(s.mean_ms for s in stages.values())
    window_ms = window_s * 1000.0
    return LatencyReport(
        stages=stages,
        total_mean_ms=total,
        real_time_factor=total / window_ms,
        window_ms=window_ms,
        windows=len(timings[STAGES[0]]),
        mean_points_per_window=float(np.mean(points)) if len(points) else 0.0,
    )


def format_table(report: LatencyReport) -> str:
    lines = [f"{'Stage':<30}{'mean ms':>10}{'std ms':>10}{'p95 ms':>10}"]
    for name in STAGES:
        s = report.stages[name]
        lines.append(f"{_LABELS[name]:<30}{s.mean_ms:>10.3f}{s.std_ms:>10.3f}{s.p95_ms:>10.3f}")
    lines.append(f"{'Total':<30}{report.total_mean_ms:>10.3f}")
    lines.append(f"Real-time factor ({report.window_ms:.0f} ms window): {report.real_time_factor:.4f}")
    return "\n".join(lines)


def densify(streams: Streams, factor: float, seed: int = 0) -> Streams:
    """Resample keypoints to `factor`× their count with millimetre jitter."""
    if factor == 1.0:
        return streams
    rng = np.random.default_rng(seed)
    pts = streams.points
    n = int(round(len(pts) * factor))
    pick = np.sort(rng.integers(0, len(pts), n)) if factor > 1 else np.sort(rng.choice(len(pts), n, replace=False))
    jitter = rng.normal(scale=1e-3, size=(n, 3)) if factor > 1 else np.zeros((n, 3))
    cloud = KeypointCloud(pts.positions[pick] + jitter, pts.inv_dist_variance[pick], pts.observed_at[pick])
    return Streams(cloud, streams.trajectory, streams.gaze, streams.recording_id, streams.tag)


def _windows(streams: Streams, spec: SampleSpec) -> List[list]:
    bundles = align_streams(streams.points, streams.trajectory, streams.gaze, spec.frame_quantum_s)
    if not bundles:
        return []
    ticks = np.array([b.tick for b in bundles])
    past, stride = spec.ticks(spec.t_past_s), spec.ticks(spec.stride_s)
    out = []
    for lo in range(int(ticks[0]), int(ticks[-1]) - past + 2, stride):
        a, b = np.searchsorted(ticks, lo), np.searchsorted(ticks, lo + past)
        if b > a:
            out.append(bundles[a:b])
    return out


def _frame_groups(window: list, spec: SampleSpec) -> List[List[int]]:
    frame = spec.ticks(spec.frame_duration_s)
    start = window[0].tick
    groups: List[List[int]] = [[] for _ in range(spec.past_frames)]
    for i, b in enumerate(window):
        groups[min((b.tick - start) // frame, spec.past_frames - 1)].append(i)
    return groups


def time_window(window: list, spec: SampleSpec, model: SpanForecaster) -> Dict[str, int]:
    cfg, q = spec.cfg, spec.frame_quantum_s
    clock = time.perf_counter_ns

    t0 = clock()
    observed = [select_observed(b.points, b.pose, b.time, cfg, q) for b in window]
    t1 = clock()
    levels = [classify_levels(obs, b, cfg) for obs, b in zip(observed, window)]
    t2 = clock()
    lifted = [LiftedFrame(b.time, obs, lv) for b, obs, lv in zip(window, observed, levels)]
    anchor = window[0].pose
    spans = [assemble([lifted[i] for i in group], anchor, cfg) if group else None for group in _frame_groups(window, spec)]
    dense = np.stack(
        [
            np.stack([g.to_dense() for g in span.channels()]) if span is not None
            else np.zeros((5,) + (cfg.resolution,) * 3, dtype=bool)
            for span in spans
        ]
    ).astype(np.float32)
    t3 = clock()
    with torch.no_grad():
        model(torch.from_numpy(dense)[None])
    t4 = clock()
    return {
        "point_preprocessing": t1 - t0,
        "span_localization": t2 - t1,
        "voxelization": t3 - t2,
        "model_inference": t4 - t3,
    }


def bench(streams: Streams, spec: SampleSpec, model: SpanForecaster, windows: int, warmup: int) -> LatencyReport:
    if windows < MIN_WINDOWS:
        raise InsufficientDataError(f"bench needs at least {MIN_WINDOWS} timed windows, got {windows}")
    available = _windows(streams, spec)
    if not available:
        raise InsufficientDataError("recording has no complete window to replay")
    torch.set_num_threads(1)
    model.eval()
    timings: Dict[str, List[int]] = {name: [] for name in STAGES}
    points: List[int] = []
    for i in range(warmup + windows):
        window = available[i % len(available)]
        sample = time_window(window, spec, model)
        if i < warmup:
            continue
        for name, ns in sample.items():
            timings[name].append(ns)
        points.append(sum(len(b.points) for b in window))
    return build_report(timings, spec.t_past_s, points)


def run_bench(cfg: "RunConfig") -> LatencyReport:
    from .main import load_recordings

    spec = cfg.sample_spec()
    if cfg.streams or cfg.points:
        streams = load_recordings(cfg)[0]
    else:
        scene, behavior = load_preset(cfg.scene or "desk")
        streams, _ = generate(scene, behavior, spec.frame_quantum_s, spec.cfg)
    streams = densify(streams, cfg.point_scale, cfg.seed)
    if cfg.checkpoint:
        model = load_checkpoint(cfg.checkpoint)
    else:
        model = build_model(ModelConfig(resolution=spec.cfg.resolution, frames=spec.past_frames, seed=cfg.seed))
    report = bench(streams, spec, model, cfg.windows, cfg.warmup)
    if cfg.out:
        out = Path(cfg.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(orjson.dumps(report.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
    print(format_table(report), file=sys.stdout)
    return report
