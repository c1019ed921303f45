"""Text stream files and the scene preset registry.

Stream formats (UTF-8, comma separated, `#` comments):
    points      t_sec,x,y,z,inv_dist_var
    trajectory  t_sec,qw,qx,qy,qz,tx,ty,tz      (local→world, z forward)
    gaze        t_sec,gx,gy,gz                   (unit vector, local frame)
"""
from __future__ import annotations

import json
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..config import SCENES_FILE
from .errors import StreamFormatError
from .models import BehaviorSpec, GazeStream, KeypointCloud, SceneSpec, Streams, Trajectory

logger = logging.getLogger(__name__)

POINTS_FILE = "points.csv"
TRAJECTORY_FILE = "trajectory.csv"
GAZE_FILE = "gaze.csv"

_HEADERS = {
    POINTS_FILE: "# t_sec,x,y,z,inv_dist_var",
    TRAJECTORY_FILE: "# t_sec,qw,qx,qy,qz,tx,ty,tz",
    GAZE_FILE: "# t_sec,gx,gy,gz",
}

RENORMALIZE_SILENT = 1e-6
RENORMALIZE_LIMIT = 1e-3


@dataclass
class IngestReport:
    malformed: List[Tuple[str, int, str]] = field(default_factory=list)
    renormalized: int = 0


# ---------------------------- parsing ---------------------------- #

def _parse_rows(path: Path, columns: int, report: IngestReport) -> np.ndarray:
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split(",")
            try:
                if len(parts) != columns:
                    raise ValueError(f"expected {columns} fields, got {len(parts)}")
                values = [float(p) for p in parts]
                if not all(np.isfinite(values)):
                    raise ValueError("non-finite value")
            except ValueError as e:
                report.malformed.append((path.name, line_no, str(e)))
                logger.warning("%s:%d skipped malformed row (%s)", path.name, line_no, e)
                continue
            rows.append(values)
    return np.array(rows, dtype=np.float64).reshape(-1, columns)


def _load_table(path: Path, columns: int, report: IngestReport) -> np.ndarray:
    try:
        table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=np.float64, encoding="utf-8")
    except ValueError:
        # slow path to report the offending line numbers
        return _parse_rows(path, columns, report)
    if table.size == 0:
        return np.zeros((0, columns))
    if table.shape[1] != columns or not np.all(np.isfinite(table)):
        return _parse_rows(path, columns, report)
    return table


def _unit_rows(values: np.ndarray, what: str, path: Path, report: IngestReport) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1)
    error = np.abs(norms - 1.0)
    bad = np.flatnonzero(error > RENORMALIZE_LIMIT)
    if len(bad):
        raise StreamFormatError(
            f"{path.name}: {what} row {int(bad[0]) + 1} has norm {norms[bad[0]]:.6f} (tolerance {RENORMALIZE_LIMIT})"
        )
    loud = int(np.count_nonzero(error > RENORMALIZE_SILENT))
    if loud:
        logger.warning("%s: renormalized %d %s rows off unit length by more than %g", path.name, loud, what, RENORMALIZE_SILENT)
        report.renormalized += loud
    return values / norms[:, None]


def ingest(
    points_file,
    trajectory_file,
    gaze_file,
    recording_id: Optional[str] = None,
    tag: str = "",
    report: Optional[IngestReport] = None,
) -> Streams:
    """Parse, validate and time-sort the three stream files."""
    report = report if report is not None else IngestReport()
    points_path, traj_path, gaze_path = Path(points_file), Path(trajectory_file), Path(gaze_file)

    gaze = _load_table(gaze_path, 4, report)
    if len(gaze) == 0:
        raise StreamFormatError("gaze stream empty")
    traj = _load_table(traj_path, 8, report)
    if len(traj) == 0:
        raise StreamFormatError("trajectory stream empty")
    pts = _load_table(points_path, 5, report)

    steps = np.diff(traj[:, 0])
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 2
        raise StreamFormatError(f"{traj_path.name}: pose timestamps not strictly increasing at data row {row}")
    quats = _unit_rows(traj[:, 1:5], "quaternion", traj_path, report)

    gaze = gaze[np.argsort(gaze[:, 0], kind="stable")]
    directions = _unit_rows(gaze[:, 1:4], "gaze", gaze_path, report)

    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    if np.any(pts[:, 4] < 0):
        raise StreamFormatError(f"{points_path.name}: negative inv_dist_var")

    return Streams(
        points=KeypointCloud(pts[:, 1:4], pts[:, 4], pts[:, 0]),
        trajectory=Trajectory(traj[:, 0], quats, traj[:, 5:8]),
        gaze=GazeStream(gaze[:, 0], directions),
        recording_id=recording_id or points_path.parent.name or "recording",
        tag=tag,
    )


def ingest_dir(directory, recording_id: Optional[str] = None, tag: str = "") -> Streams:
    d = Path(directory)
    return ingest(d / POINTS_FILE, d / TRAJECTORY_FILE, d / GAZE_FILE, recording_id or d.name, tag)


def ingest_text(
    points: str, trajectory: str, gaze: str, recording_id: str = "upload", tag: str = ""
) -> Streams:
    """Same as `ingest`, for stream contents held in memory."""
    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp)
        for name, text in ((POINTS_FILE, points), (TRAJECTORY_FILE, trajectory), (GAZE_FILE, gaze)):
            (d / name).write_text(text or "", encoding="utf-8")
        return ingest(d / POINTS_FILE, d / TRAJECTORY_FILE, d / GAZE_FILE, recording_id, tag)


# ---------------------------- writing ---------------------------- #

def _write_table(path: Path, header: str, table: np.ndarray) -> None:
    # %.17g round-trips float64 exactly
    np.savetxt(path, table, delimiter=",", fmt="%.17g", header=header.lstrip("# "), comments="# ", encoding="utf-8")


def write_streams(streams: Streams, directory) -> Dict[str, Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    p, tr, g = streams.points, streams.trajectory, streams.gaze
    tables = {
        POINTS_FILE: np.column_stack([p.observed_at, p.positions, p.inv_dist_variance]),
        TRAJECTORY_FILE: np.column_stack([tr.times, tr.quaternions, tr.translations]),
        GAZE_FILE: np.column_stack([g.times, g.directions]),
    }
    paths = {}
    for name, table in tables.items():
        paths[name] = out / name
        _write_table(paths[name], _HEADERS[name], table)
    return paths


# ---------------------------- presets ---------------------------- #

def load_scenes(path=None) -> Dict[str, Any]:
    with open(path or SCENES_FILE, "r", encoding="utf-8") as f:
        return json.load(f)


def load_preset(name: str, path=None) -> Tuple[SceneSpec, BehaviorSpec]:
    registry = load_scenes(path).get("scenes", {})
    if name not in registry:
        raise KeyError(f"unknown scene preset '{name}'; available: {sorted(registry)}")
    entry = registry[name]
    return SceneSpec.model_validate(entry["scene"]), BehaviorSpec.model_validate(entry["behavior"])


def load_scene_file(path) -> Tuple[SceneSpec, BehaviorSpec]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return SceneSpec.model_validate(data["scene"]), BehaviorSpec.model_validate(data["behavior"])
