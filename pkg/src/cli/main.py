"""Command-line pipeline: synth → curate → train → eval / project2d, plus lift and bench.

    python -m src.cli.main <subcommand> [flags]
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import orjson
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from rapidfuzz import process

from ..config import FRAME_QUANTUM_S, configure_logging
from ..core.archive import read_archive, write_archive
from ..core.baselines import baseline_global_prior
from ..core.dataset import (
    BuildStats,
    RandomStratified,
    SpanSample,
    TagHoldout,
    build_samples,
    lift_windows,
    split,
)
from ..core.evaluation import (
    ForecastFn,
    evaluate,
    model_forecaster,
    persistence_forecaster,
    prior_forecaster,
    write_report,
)
from ..core.loaders import ingest, ingest_dir, load_preset, load_scene_file, load_scenes, write_streams
from ..core.models import (
    LEVELS,
    CameraModel,
    Eccentricities,
    Level,
    ModelConfig,
    OptimizerSpec,
    SampleSpec,
    SpanConfig,
    Streams,
)
from ..core.projection import gaze_pixels, project_to_2d, score_2d
from ..core.synth import generate, inject_outliers, with_duration
from ..core.training import load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)

Variant = Literal["full", "no-history", "no-global", "bce", "single-task"]

VARIANTS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "no-history": {"use_history": False},
    "no-global": {"use_global_embedding": False},
    "bce": {"loss": "bce"},
    "single-task": {},
}

SKILLED_T_FUTURE_S = 4.0


class RunConfig(BaseModel):
    """Every flag of every subcommand; config files may set any of them."""

    model_config = ConfigDict(extra="forbid")

    command: str
    config: Optional[str] = None
    seed: int = 42
    out: Optional[str] = None
    log_level: Optional[str] = None

    # span geometry and window protocol
    cube_length: float = Field(3.2, gt=0)
    resolution: int = Field(16, ge=2)
    t_past: float = Field(2.0, gt=0)
    t_future: float = Field(2.0, gt=0)
    stride: float = Field(1.0, gt=0)
    frame_duration: float = Field(1.0, gt=0)
    frame_quantum: float = Field(FRAME_QUANTUM_S, gt=0)
    no_outlier_filter: bool = False

    # stream inputs
    points: Optional[str] = None
    trajectory: Optional[str] = None
    gaze: Optional[str] = None
    streams: List[str] = Field(default_factory=list)
    tag: str = ""

    # synth
    scene: Optional[str] = None
    scene_file: Optional[str] = None
    duration: Optional[float] = Field(None, gt=0)
    outlier_rate: float = Field(0.0, ge=0, le=1)
    outlier_magnitude: float = Field(1.0, ge=0)

    # curate / splits
    skilled: bool = False
    archive: Optional[str] = None
    holdout_tags: List[str] = Field(default_factory=list)
    val_fraction: float = Field(0.1, ge=0, lt=1)
    test_fraction: float = Field(0.1, ge=0, lt=1)
    split_part: Literal["train", "val", "test"] = "test"

    # train
    checkpoint: Optional[str] = None
    variant: Variant = "full"
    level: Optional[Level] = None
    category: Optional[str] = None
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-3, gt=0)
    max_steps: Optional[int] = Field(None, ge=1)
    feature_dim: int = Field(64, ge=1)
    threshold: float = Field(0.5, gt=0, lt=1)

    # eval / project2d
    baseline: Optional[Literal["prior", "persistence"]] = None
    report_format: Literal["csv", "json"] = "json"
    n_steps: Optional[int] = Field(None, ge=1)
    focal_px: float = Field(611.0, gt=0)

    # bench
    windows: int = Field(100, ge=1)
    warmup: int = Field(5, ge=0)
    point_scale: float = Field(1.0, gt=0)

    def span_config(self) -> SpanConfig:
        return SpanConfig(
            cube_length_m=self.cube_length,
            resolution=self.resolution,
            eccentricities_deg=Eccentricities(),
            outlier_filter=not self.no_outlier_filter,
        )

    def sample_spec(self) -> SampleSpec:
        return SampleSpec(
            t_past_s=self.t_past,
            t_future_s=SKILLED_T_FUTURE_S if self.skilled else self.t_future,
            stride_s=self.stride,
            frame_duration_s=self.frame_duration,
            frame_quantum_s=self.frame_quantum,
            cfg=self.span_config(),
        )

    def camera(self) -> CameraModel:
        return CameraModel(focal_px=self.focal_px)

    def split_policy(self):
        if self.holdout_tags:
            return TagHoldout(test_tags=self.holdout_tags, val_fraction=self.val_fraction, seed=self.seed)
        train = 1.0 - self.val_fraction - self.test_fraction
        return RandomStratified(fractions=(train, self.val_fraction, self.test_fraction), seed=self.seed)


class ConfigKeyError(Exception):
    pass


# ---------------------------- argument parsing ---------------------------- #

def _add(p: argparse.ArgumentParser, *flags: str, **kw) -> None:
    p.add_argument(*flags, default=argparse.SUPPRESS, **kw)


def _common(p: argparse.ArgumentParser) -> None:
    _add(p, "--config", help="key = value file with flag defaults")
    _add(p, "--seed", type=int)
    _add(p, "--out")
    _add(p, "--log-level")
    _add(p, "--cube-length", type=float, help="span cube side D in meters")
    _add(p, "--resolution", type=int, help="grid cells per side R")
    _add(p, "--t-past", type=float)
    _add(p, "--t-future", type=float)
    _add(p, "--stride", type=float)
    _add(p, "--frame-duration", type=float)
    _add(p, "--frame-quantum", type=float)
    _add(p, "--no-outlier-filter", action="store_true")


def _stream_inputs(p: argparse.ArgumentParser) -> None:
    _add(p, "--points")
    _add(p, "--trajectory")
    _add(p, "--gaze")
    _add(p, "--streams", nargs="+", help="stream directories, optionally DIR:TAG")
    _add(p, "--tag")


def _split_flags(p: argparse.ArgumentParser) -> None:
    _add(p, "--archive")
    _add(p, "--holdout-tags", nargs="+")
    _add(p, "--val-fraction", type=float)
    _add(p, "--test-fraction", type=float)
    _add(p, "--split-part", choices=["train", "val", "test"])
    _add(p, "--threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fovs", description="Egocentric 3D visual span lifting and forecasting")
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>")

    p = sub.add_parser("synth", help="generate a synthetic recording")
    _common(p)
    _add(p, "--scene", help="preset name from the scene registry")
    _add(p, "--scene-file")
    _add(p, "--duration", type=float)
    _add(p, "--tag")
    _add(p, "--outlier-rate", type=float)
    _add(p, "--outlier-magnitude", type=float)

    p = sub.add_parser("lift", help="dump per-window multi-level spans as JSON lines")
    _common(p)
    _stream_inputs(p)

    p = sub.add_parser("curate", help="build a sample archive from recordings")
    _common(p)
    _stream_inputs(p)
    _add(p, "--skilled", action="store_true", help="4 s prediction horizon")

    p = sub.add_parser("train", help="train a forecaster on an archive")
    _common(p)
    _split_flags(p)
    _add(p, "--variant", choices=list(VARIANTS))
    _add(p, "--level", choices=list(LEVELS))
    _add(p, "--category", help="train only on recordings with this tag")
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--max-steps", type=int)
    _add(p, "--feature-dim", type=int)

    p = sub.add_parser("eval", help="score a checkpoint or baseline on an archive split")
    _common(p)
    _split_flags(p)
    _add(p, "--checkpoint")
    _add(p, "--baseline", choices=["prior", "persistence"])
    _add(p, "--category")
    _add(p, "--report-format", choices=["csv", "json"])

    p = sub.add_parser("project2d", help="2D gaze anticipation from forecasts")
    _common(p)
    _split_flags(p)
    _add(p, "--checkpoint")
    _add(p, "--baseline", choices=["prior", "persistence"])
    _add(p, "--n-steps", type=int)
    _add(p, "--focal-px", type=float)

    p = sub.add_parser("bench", help="per-stage latency benchmark")
    _common(p)
    _stream_inputs(p)
    _add(p, "--scene")
    _add(p, "--checkpoint")
    _add(p, "--windows", type=int)
    _add(p, "--warmup", type=int)
    _add(p, "--point-scale", type=float)
    return parser


def _normalize(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_").lower()


def _coerce(key: str, value: str) -> Any:
    if key in ("streams", "holdout_tags"):
        return value.split()
    if RunConfig.model_fields[key].annotation is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def read_config_file(path: str) -> Dict[str, Any]:
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    known = [k for k in RunConfig.model_fields if k not in ("command", "config")]
    values: Dict[str, Any] = {}
    for raw_key, value in dotenv_values(path).items():
        key = _normalize(raw_key)
        if key not in known:
            match = process.extractOne(key, known, score_cutoff=70)
            hint = f" (did you mean '{match[0]}'?)" if match else ""
            raise ConfigKeyError(f"unknown config key '{raw_key}' in {path}{hint}")
        values[key] = _coerce(key, value or "")
    return values


def resolve_config(argv: Sequence[str]) -> RunConfig:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    if not args.get("command"):
        parser.print_usage(sys.stderr)
        raise SystemExit(2)
    merged: Dict[str, Any] = {}
    if args.get("config"):
        merged.update(read_config_file(args["config"]))
    merged.update(args)
    return RunConfig.model_validate(merged)


# ---------------------------- helpers ---------------------------- #

def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) in (None, "", [])]
    if missing:
        raise ValueError("missing required flag(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _parse_stream_arg(entry: str, default_tag: str) -> Tuple[str, str]:
    path, sep, tag = entry.partition(":")
    return path, (tag if sep else default_tag)


def load_recordings(cfg: RunConfig) -> List[Streams]:
    recordings = []
    if cfg.points or cfg.trajectory or cfg.gaze:
        _require(cfg, "points", "trajectory", "gaze")
        recordings.append(ingest(cfg.points, cfg.trajectory, cfg.gaze, tag=cfg.tag))
    for entry in cfg.streams:
        path, tag = _parse_stream_arg(entry, cfg.tag)
        recordings.append(ingest_dir(path, tag=tag))
    if not recordings:
        raise ValueError("no input streams: pass --streams DIR or --points/--trajectory/--gaze")
    return recordings


def _dump_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))


def _select(samples: List[SpanSample], category: Optional[str]) -> List[SpanSample]:
    if category is None:
        return samples
    chosen = [s for s in samples if s.tag == category]
    if not chosen:
        raise ValueError(f"no samples tagged '{category}' (tags: {sorted({s.tag for s in samples})})")
    return chosen


def _load_split(cfg: RunConfig) -> Tuple[SampleSpec, Dict[str, List[SpanSample]]]:
    _require(cfg, "archive")
    spec, samples = read_archive(cfg.archive)
    return spec, split(_select(samples, cfg.category), cfg.split_policy())


def _forecaster(cfg: RunConfig, parts: Dict[str, List[SpanSample]]) -> ForecastFn:
    if cfg.baseline == "persistence":
        return persistence_forecaster(cfg.threshold)
    if cfg.baseline == "prior":
        return prior_forecaster(baseline_global_prior(parts["train"], threshold=cfg.threshold))
    _require(cfg, "checkpoint")
    return model_forecaster(load_checkpoint(cfg.checkpoint), cfg.threshold)


# ---------------------------- subcommands ---------------------------- #

def cmd_synth(cfg: RunConfig) -> None:
    _require(cfg, "out")
    if cfg.scene_file:
        scene, behavior = load_scene_file(cfg.scene_file)
        tag = cfg.tag
    else:
        name = cfg.scene or "desk"
        scene, behavior = load_preset(name)
        tag = cfg.tag or load_scenes()["scenes"][name].get("tag", name)
    scene = scene.model_copy(update={"seed": cfg.seed})
    if cfg.duration:
        behavior = with_duration(behavior, cfg.duration)
    streams, truth = generate(scene, behavior, cfg.frame_quantum, cfg.span_config(), tag=tag)
    if cfg.outlier_rate > 0:
        points, _ = inject_outliers(streams.points, cfg.outlier_rate, cfg.outlier_magnitude, cfg.seed)
        streams = Streams(points, streams.trajectory, streams.gaze, streams.recording_id, streams.tag)
    out = Path(cfg.out)
    write_streams(streams, out)
    _dump_json(
        out / "synth.json",
        {
            "recording_id": streams.recording_id,
            "tag": streams.tag,
            "frames": len(truth.frames),
            "keypoints": len(streams.points),
            "coverage": truth.coverage,
        },
    )
    logger.info("wrote synthetic recording to %s", out)


def cmd_lift(cfg: RunConfig) -> None:
    _require(cfg, "out")
    spec = cfg.sample_spec()
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for streams in load_recordings(cfg):
        for span in lift_windows(streams, spec):
            record = {
                "recording_id": streams.recording_id,
                "window": list(span.window),
                "origin": list(span.scene.origin),
                "cube_length_m": span.scene.cube_length_m,
                "resolution": span.scene.resolution,
                "counts": {**{k: g.count() for k, g in span.levels.items()}, "scene": span.scene.count()},
                "levels": {k: g.cells() for k, g in span.levels.items()},
                "scene": span.scene.cells(),
            }
            lines.append(orjson.dumps(record, option=orjson.OPT_SERIALIZE_NUMPY))
    out.write_bytes(b"\n".join(lines) + (b"\n" if lines else b""))
    logger.info("wrote %d windows to %s", len(lines), out)


def cmd_curate(cfg: RunConfig) -> None:
    _require(cfg, "out")
    spec = cfg.sample_spec()
    samples: List[SpanSample] = []
    stats = BuildStats()
    for streams in load_recordings(cfg):
        samples.extend(build_samples(streams, spec, stats=stats))
    write_archive(samples, cfg.out, spec)
    logger.info(
        "curated %d samples (%d dropped: empty future, %d: no input frames)",
        len(samples),
        stats.dropped_empty_future,
        stats.dropped_no_input,
    )


def model_config_for(cfg: RunConfig, spec: SampleSpec) -> ModelConfig:
    overrides = dict(VARIANTS[cfg.variant])
    if cfg.variant == "single-task":
        overrides["single_task_level"] = cfg.level or "foveal"
    return ModelConfig(
        feature_dim=cfg.feature_dim,
        resolution=spec.cfg.resolution,
        frames=spec.past_frames,
        seed=cfg.seed,
        **overrides,
    )


def cmd_train(cfg: RunConfig) -> None:
    _require(cfg, "out")
    spec, parts = _load_split(cfg)
    model_cfg = model_config_for(cfg, spec)
    opt = OptimizerSpec(
        lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, max_steps=cfg.max_steps, threshold=cfg.threshold
    )
    model, report = train(parts["train"], model_cfg, opt, parts["val"])
    out = save_checkpoint(model, cfg.out)
    _dump_json(Path(f"{out}.report.json"), report.model_dump(mode="json"))


def cmd_eval(cfg: RunConfig) -> None:
    _require(cfg, "out")
    _, parts = _load_split(cfg)
    report = evaluate(_forecaster(cfg, parts), parts[cfg.split_part])
    write_report(report, cfg.out, cfg.report_format)


def cmd_project2d(cfg: RunConfig) -> None:
    _require(cfg, "out")
    _, parts = _load_split(cfg)
    samples = parts[cfg.split_part]
    if not samples:
        raise ValueError(f"split '{cfg.split_part}' is empty")
    cam = cfg.camera()
    forecasts = _forecaster(cfg, parts)(samples)
    rows, preds, truths, skipped = [], [], [], 0
    for sample, forecast in zip(samples, forecasts):
        n = cfg.n_steps or len(sample.future_gaze) or 1
        try:
            projected = project_to_2d(forecast, sample.anchor, cam, sample.current_gaze, n)
        except ValueError:
            skipped += 1
            continue
        truth_px, _ = gaze_pixels(cam, sample.future_gaze[:n])
        if len(truth_px) < n:
            truth_px = list(truth_px) + [[float("nan")] * 2] * (n - len(truth_px))
        for k in range(n):
            rows.append([sample.sample_id, k + 1, *projected.points[k], *truth_px[k], bool(projected.in_frame[k])])
            preds.append(projected.points[k])
            truths.append(truth_px[k])
    if not rows:
        raise ValueError("no sample had a non-degenerate foveal forecast")
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "step", "pred_u", "pred_v", "truth_u", "truth_v", "in_frame"])
        writer.writerows(rows)
    score = score_2d(preds, truths, cam)
    _dump_json(Path(f"{out}.score.json"), {**score.model_dump(), "samples": len(samples), "skipped": skipped})
    logger.info("2D anticipation f1=%.3f precision=%.3f recall=%.3f", score.f1, score.precision, score.recall)


def cmd_bench(cfg: RunConfig) -> None:
    from .bench import run_bench

    run_bench(cfg)


COMMANDS = {
    "synth": cmd_synth,
    "lift": cmd_lift,
    "curate": cmd_curate,
    "train": cmd_train,
    "eval": cmd_eval,
    "project2d": cmd_project2d,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = resolve_config(argv)
    except ConfigKeyError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        print(f"error: {where}: {first['msg']}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    configure_logging(cfg.log_level)
    try:
        COMMANDS[cfg.command](cfg)
    except (ValueError, RuntimeError, OSError, KeyError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
