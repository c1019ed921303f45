from __future__ import annotations

import numpy as np
import pytest

from src.core.errors import StreamFormatError
from src.core.loaders import (
    IngestReport,
    ingest,
    ingest_dir,
    ingest_text,
    load_preset,
    load_scenes,
    write_streams,
)
from src.core.synth import validate_specs

TRAJECTORY = "# t_sec,qw,qx,qy,qz,tx,ty,tz\n0.0,1,0,0,0,0,0,1.6\n0.1,1,0,0,0,0,0,1.6\n"
GAZE = "0.0,0,0,1\n0.1,0,0,1\n"
POINTS = "0.0,0.5,0,1.5,0.01\n0.1,0.4,0,1.5,0.01\n"


def _write(tmp_path, points=POINTS, trajectory=TRAJECTORY, gaze=GAZE):
    for name, text in (("points.csv", points), ("trajectory.csv", trajectory), ("gaze.csv", gaze)):
        (tmp_path / name).write_text(text, encoding="utf-8")
    return tmp_path


def test_write_then_ingest_preserves_streams(tmp_path, streams):
    write_streams(streams, tmp_path / "rec")
    back = ingest_dir(tmp_path / "rec", tag="desk")
    np.testing.assert_array_equal(back.points.positions, streams.points.positions)
    np.testing.assert_array_equal(back.points.inv_dist_variance, streams.points.inv_dist_variance)
    np.testing.assert_array_equal(back.trajectory.translations, streams.trajectory.translations)
    np.testing.assert_allclose(back.gaze.directions, streams.gaze.directions, atol=1e-15)
    assert back.recording_id == "rec"
    assert back.tag == "desk"


def test_malformed_rows_are_skipped_and_reported(tmp_path):
    d = _write(tmp_path, points=POINTS + "0.2,abc,0,1,0.1\n0.3,1,2\n")
    report = IngestReport()
    streams = ingest(d / "points.csv", d / "trajectory.csv", d / "gaze.csv", report=report)
    assert len(streams.points) == 2
    assert [(name, line) for name, line, _ in report.malformed] == [("points.csv", 3), ("points.csv", 4)]


def test_non_increasing_pose_timestamps(tmp_path):
    d = _write(tmp_path, trajectory="0.1,1,0,0,0,0,0,0\n0.1,1,0,0,0,0,0,0\n")
    with pytest.raises(StreamFormatError, match="strictly increasing"):
        ingest_dir(d)


def test_quaternion_far_from_unit_is_rejected(tmp_path):
    d = _write(tmp_path, trajectory="0.0,1.1,0,0,0,0,0,0\n")
    with pytest.raises(StreamFormatError, match="norm"):
        ingest_dir(d)


def test_near_unit_rows_are_renormalized(tmp_path):
    d = _write(tmp_path, trajectory="0.0,1.00001,0,0,0,0,0,0\n", gaze="0.0,0,0,1.0000001\n")
    report = IngestReport()
    streams = ingest(d / "points.csv", d / "trajectory.csv", d / "gaze.csv", report=report)
    assert report.renormalized == 1
    assert np.linalg.norm(streams.trajectory.quaternions[0]) == pytest.approx(1.0, abs=1e-15)
    assert np.linalg.norm(streams.gaze.directions[0]) == pytest.approx(1.0, abs=1e-15)


def test_empty_gaze_stream(tmp_path):
    d = _write(tmp_path, gaze="# t_sec,gx,gy,gz\n")
    with pytest.raises(StreamFormatError, match="gaze stream empty"):
        ingest_dir(d)


def test_negative_inverse_depth_variance(tmp_path):
    d = _write(tmp_path, points="0.0,0,0,1,-0.5\n")
    with pytest.raises(StreamFormatError):
        ingest_dir(d)


def test_unsorted_points_are_time_sorted(tmp_path):
    d = _write(tmp_path, points="0.1,1,0,1,0\n0.0,2,0,1,0\n")
    streams = ingest_dir(d)
    assert streams.points.observed_at.tolist() == [0.0, 0.1]
    assert streams.points.positions[0, 0] == 2.0


def test_ingest_text_matches_files(tmp_path):
    from_text = ingest_text(POINTS, TRAJECTORY, GAZE)
    from_files = ingest_dir(_write(tmp_path))
    np.testing.assert_array_equal(from_text.points.positions, from_files.points.positions)
    assert from_text.recording_id == "upload"


# ── Scene presets ────────────────────────────────────────────────────────

def test_bundled_presets_are_valid():
    names = sorted(load_scenes()["scenes"])
    assert names == ["desk", "kitchen", "workshop"]
    for name in names:
        scene, behavior = load_preset(name)
        validate_specs(scene, behavior)
    assert load_preset("desk")[0].seed == 42


def test_unknown_preset():
    with pytest.raises(KeyError, match="available"):
        load_preset("garage")
