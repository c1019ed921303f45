"""Sliding-window sample construction and train/val/test splits.

All window arithmetic runs on integer frame-quantum ticks. A sample predicted
at tick τ sees the input window [τ − t_past, τ) split into T_p frames of
`frame_duration_s`, and targets the per-level union over [τ, τ + t_future).
Every grid of a sample shares the anchor of its input-window start.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..config import FOVS_THREADS
from .errors import InsufficientDataError
from .geometry import align_streams, frame_tick
from .models import CHANNELS, LEVELS, FrameBundle, GazeSample, Pose, SampleSpec, SpanDiagnostics, Streams
from .voxel import LiftedFrame, MultiLevelSpan, OccupancyGrid, assemble, lift_frame

logger = logging.getLogger(__name__)


# ---------------------------- samples ---------------------------- #

@dataclass(frozen=True, eq=False)
class SpanSample:
    inputs: Tuple[MultiLevelSpan, ...]
    target: Dict[str, OccupancyGrid]
    anchor: Pose
    current_gaze: GazeSample
    recording_id: str
    sample_time: float
    tag: str = ""
    future_gaze: Tuple[GazeSample, ...] = ()

    @property
    def origin(self) -> Tuple[float, float, float]:
        return self.target[LEVELS[0]].origin

    @property
    def resolution(self) -> int:
        return self.target[LEVELS[0]].resolution

    @property
    def cube_length_m(self) -> float:
        return self.target[LEVELS[0]].cube_length_m

    @property
    def sample_id(self) -> str:
        return f"{self.recording_id}@{self.sample_time:.3f}"

    def grids(self) -> List[OccupancyGrid]:
        """Archive channel order: every input frame's five channels, then the four targets."""
        out = [g for span in self.inputs for g in span.channels()]
        out.extend(self.target[level] for level in LEVELS)
        return out

    def input_array(self) -> np.ndarray:
        """(T_p, 5, R, R, R) float32 occupancy."""
        return np.stack(
            [np.stack([g.to_dense() for g in span.channels()]) for span in self.inputs]
        ).astype(np.float32)

    def target_array(self, levels: Sequence[str] = LEVELS) -> np.ndarray:
        return np.stack([self.target[level].to_dense() for level in levels]).astype(np.float32)


@dataclass
class BuildStats:
    built: int = 0
    dropped_empty_future: int = 0
    dropped_no_input: int = 0
    diagnostics: SpanDiagnostics = field(default_factory=SpanDiagnostics)


# ---------------------------- window protocol ---------------------------- #

def prediction_ticks(start: int, end: int, spec: SampleSpec) -> List[int]:
    """Ticks τ with τ − t_past ≥ start and τ + t_future ≤ end (end exclusive)."""
    past, future, stride = spec.ticks(spec.t_past_s), spec.ticks(spec.t_future_s), spec.ticks(spec.stride_s)
    if end - start < past + future:
        raise InsufficientDataError(
            f"recording spans {(end - start) * spec.frame_quantum_s:.3f}s, "
            f"shorter than t_past + t_future = {spec.t_past_s + spec.t_future_s:.3f}s"
        )
    return list(range(start + past, end - future + 1, stride))


def expected_sample_count(duration_s: float, spec: SampleSpec) -> int:
    span = spec.ticks(duration_s) - spec.ticks(spec.t_past_s) - spec.ticks(spec.t_future_s)
    return 1 + span // spec.ticks(spec.stride_s) if span >= 0 else 0


def frame_window(tau: int, index: int, spec: SampleSpec) -> Tuple[float, float]:
    """Nominal [start, end) seconds of input frame `index` for prediction tick `tau`."""
    frame = spec.ticks(spec.frame_duration_s)
    lo = tau - spec.ticks(spec.t_past_s) + index * frame
    return lo * spec.frame_quantum_s, (lo + frame) * spec.frame_quantum_s


def _stream_extent(streams: Streams, spec: SampleSpec) -> Tuple[int, int]:
    ticks = frame_tick(streams.trajectory.times, spec.frame_quantum_s)
    return int(ticks[0]), int(ticks[-1]) + 1


class _WindowIndex:
    """Bundles and their lifted frames keyed by tick."""

    def __init__(self, bundles: Sequence[FrameBundle], lifted: Sequence[LiftedFrame]):
        self.ticks = np.array([b.tick for b in bundles], dtype=np.int64)
        self.bundles = list(bundles)
        self.lifted = list(lifted)

    def between(self, lo: int, hi: int) -> slice:
        return slice(int(np.searchsorted(self.ticks, lo)), int(np.searchsorted(self.ticks, hi)))

    def inputs(self, tau: int, spec: SampleSpec) -> Tuple[Pose, Tuple[MultiLevelSpan, ...]]:
        past, frame = spec.ticks(spec.t_past_s), spec.ticks(spec.frame_duration_s)
        window = self.between(tau - past, tau)
        if window.start == window.stop:
            raise InsufficientDataError(f"no frames in the input window ending at tick {tau}")
        anchor = self.bundles[window.start].pose
        cfg = spec.cfg
        spans = []
        for i in range(spec.past_frames):
            lo = tau - past + i * frame
            part = self.lifted[self.between(lo, lo + frame)]
            span_window = frame_window(tau, i, spec)
            if part:
                spans.append(replace(assemble(part, anchor, cfg), window=span_window))
            else:
                spans.append(MultiLevelSpan.empty(anchor, cfg, span_window))
        return anchor, tuple(spans)


def _lift_all(
    bundles: Sequence[FrameBundle], spec: SampleSpec, threads: int, diagnostics: SpanDiagnostics
) -> List[LiftedFrame]:
    # per-worker diagnostics merged in submission order
    def work(bundle: FrameBundle) -> Tuple[LiftedFrame, SpanDiagnostics]:
        local = SpanDiagnostics()
        return lift_frame(bundle, spec.cfg, spec.frame_quantum_s, local), local

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(work, bundles))
    for _, local in results:
        diagnostics.degenerate_points += local.degenerate_points
        diagnostics.outliers_removed += local.outliers_removed
    return [frame for frame, _ in results]


def _index(streams: Streams, spec: SampleSpec, threads: int, stats: BuildStats) -> _WindowIndex:
    bundles = align_streams(
        streams.points, streams.trajectory, streams.gaze, spec.frame_quantum_s, stats.diagnostics
    )
    lifted = _lift_all(bundles, spec, threads, stats.diagnostics)
    logger.info("%s: aligned %d frames", streams.recording_id, len(bundles))
    return _WindowIndex(bundles, lifted)


def build_samples(
    streams: Streams,
    spec: SampleSpec,
    threads: Optional[int] = None,
    stats: Optional[BuildStats] = None,
) -> List[SpanSample]:
    """One sample per stride over the recording; empty-future samples are dropped and counted."""
    stats = stats if stats is not None else BuildStats()
    start, end = _stream_extent(streams, spec)
    taus = prediction_ticks(start, end, spec)
    index = _index(streams, spec, threads or FOVS_THREADS, stats)
    future = spec.ticks(spec.t_future_s)

    samples: List[SpanSample] = []
    for tau in taus:
        try:
            window_anchor, inputs = index.inputs(tau, spec)
        except InsufficientDataError:
            stats.dropped_no_input += 1
            continue
        ahead = index.between(tau, tau + future)
        lifted = index.lifted[ahead]
        if not lifted:
            stats.dropped_empty_future += 1
            continue
        target_span = assemble(lifted, window_anchor, spec.cfg)
        if target_span.scene.is_empty():
            stats.dropped_empty_future += 1
            continue
        current = index.bundles[index.between(tau - spec.ticks(spec.t_past_s), tau).stop - 1]
        samples.append(
            SpanSample(
                inputs=inputs,
                target=dict(target_span.levels),
                anchor=current.pose,
                current_gaze=current.gaze,
                recording_id=streams.recording_id,
                sample_time=tau * spec.frame_quantum_s,
                tag=streams.tag,
                future_gaze=tuple(b.gaze for b in index.bundles[ahead]),
            )
        )
    stats.built += len(samples)
    logger.info(
        "%s: built %d samples, dropped %d with empty future scene",
        streams.recording_id,
        len(samples),
        stats.dropped_empty_future,
    )
    return samples


def sample_inputs(
    streams: Streams,
    prediction_time: float,
    spec: SampleSpec,
    threads: Optional[int] = None,
) -> SpanSample:
    """Input-only sample at `prediction_time` (empty target grids, no future gaze).

    Uses nothing at or after the prediction time, so it can be built from a
    live stream that ends at the prediction time.
    """
    stats = BuildStats()
    tau = int(frame_tick(prediction_time, spec.frame_quantum_s))
    index = _index(streams, spec, threads or FOVS_THREADS, stats)
    anchor, inputs = index.inputs(tau, spec)
    current = index.bundles[index.between(tau - spec.ticks(spec.t_past_s), tau).stop - 1]
    blank = MultiLevelSpan.empty(anchor, spec.cfg, (0.0, 0.0)).levels
    return SpanSample(
        inputs=inputs,
        target=dict(blank),
        anchor=current.pose,
        current_gaze=current.gaze,
        recording_id=streams.recording_id,
        sample_time=tau * spec.frame_quantum_s,
        tag=streams.tag,
    )


def lift_windows(
    streams: Streams,
    spec: SampleSpec,
    threads: Optional[int] = None,
    stats: Optional[BuildStats] = None,
) -> List[MultiLevelSpan]:
    """Multi-level span of every t_past-long window, stepping by stride, anchored at its start."""
    stats = stats if stats is not None else BuildStats()
    start, end = _stream_extent(streams, spec)
    past, stride = spec.ticks(spec.t_past_s), spec.ticks(spec.stride_s)
    if end - start < past:
        raise InsufficientDataError(f"recording shorter than one {spec.t_past_s}s window")
    index = _index(streams, spec, threads or FOVS_THREADS, stats)
    spans = []
    for lo in range(start, end - past + 1, stride):
        window = index.between(lo, lo + past)
        if window.start == window.stop:
            continue
        span = assemble(index.lifted[window], index.bundles[window.start].pose, spec.cfg)
        spans.append(replace(span, window=(lo * spec.frame_quantum_s, (lo + past) * spec.frame_quantum_s)))
    return spans


def latest_prediction_time(streams: Streams, spec: SampleSpec) -> float:
    """Prediction time right after the last quantum of the streams."""
    _, end = _stream_extent(streams, spec)
    return end * spec.frame_quantum_s


# ---------------------------- splits ---------------------------- #

class TagHoldout(BaseModel):
    kind: Literal["by-recording-tag"] = "by-recording-tag"
    test_tags: List[str] = Field(min_length=1)
    val_fraction: float = Field(0.1, ge=0, lt=1)
    seed: int = 0


class RandomStratified(BaseModel):
    kind: Literal["random-stratified"] = "random-stratified"
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    @model_validator(mode="after")
    def _fractions_sum(self) -> "RandomStratified":
        if min(self.fractions) < 0 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return self


SplitPolicy = Union[TagHoldout, RandomStratified]
SPLIT_NAMES = ("train", "val", "test")


def largest_remainder(total: int, fractions: Sequence[float]) -> List[int]:
    quotas = [total * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _stratified(samples: Sequence[SpanSample], fractions: Sequence[float], seed: int) -> List[List[SpanSample]]:
    rng = np.random.default_rng(seed)
    strata: Dict[str, List[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        strata[s.tag].append(i)
    keyed = []
    for name in sorted(strata):
        members = strata[name]
        for rank, j in enumerate(rng.permutation(len(members))):
            keyed.append(((rank + 0.5) / len(members), name, members[j]))
    keyed.sort()
    counts = largest_remainder(len(samples), fractions)
    out, cursor = [], 0
    for count in counts:
        out.append([samples[k[2]] for k in keyed[cursor:cursor + count]])
        cursor += count
    return out


def split(samples: Sequence[SpanSample], policy: SplitPolicy) -> Dict[str, List[SpanSample]]:
    """Disjoint train/val/test cover of `samples`."""
    if isinstance(policy, TagHoldout):
        present = {s.tag for s in samples}
        missing = sorted(set(policy.test_tags) - present)
        if missing:
            raise ValueError(f"hold-out tag(s) {missing} absent from samples (tags: {sorted(present)})")
        held = set(policy.test_tags)
        rest = [s for s in samples if s.tag not in held]
        train, val, _ = _stratified(rest, (1.0 - policy.val_fraction, policy.val_fraction, 0.0), policy.seed)
        parts = [train, val, [s for s in samples if s.tag in held]]
    else:
        parts = _stratified(samples, policy.fractions, policy.seed)
    result = dict(zip(SPLIT_NAMES, parts))
    logger.info("split %s: %s", policy.kind, {k: len(v) for k, v in result.items()})
    return result


def channel_names(frames: int) -> List[str]:
    return [f"frame{i}.{c}" for i in range(frames) for c in CHANNELS] + [f"target.{level}" for level in LEVELS]
