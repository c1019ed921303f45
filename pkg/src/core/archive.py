"""Little-endian binary archive of SpanSamples.

    header : b"FOVS" | u16 version | u32 spec_len | SampleSpec JSON | u32 sample_count
    sample : u16 id_len | id | u16 tag_len | tag | f64 sample_time | 3×f64 grid origin
             | 8×f64 anchor pose | 4×f64 current gaze | u16 n_future | n_future×4×f64
             | (T_p·5 + 4) grids × words_per_grid × u64
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import orjson

from .dataset import SpanSample, frame_window
from .errors import ArchiveFormatError, GeometryMismatchError
from .models import CHANNELS, LEVELS, GazeSample, Pose, SampleSpec
from .voxel import MultiLevelSpan, OccupancyGrid, words_per_grid

logger = logging.getLogger(__name__)

MAGIC = b"FOVS"
VERSION = 1


def grids_per_sample(spec: SampleSpec) -> int:
    return spec.past_frames * len(CHANNELS) + len(LEVELS)


def _check_sample(sample: SpanSample, spec: SampleSpec) -> None:
    cfg = spec.cfg
    if len(sample.inputs) != spec.past_frames:
        raise GeometryMismatchError("frames", len(sample.inputs), spec.past_frames)
    reference = sample.target[LEVELS[0]]
    for grid in sample.grids():
        if grid.resolution != cfg.resolution:
            raise GeometryMismatchError("resolution", grid.resolution, cfg.resolution)
        if grid.cube_length_m != cfg.cube_length_m:
            raise GeometryMismatchError("cube_length_m", grid.cube_length_m, cfg.cube_length_m)
        grid.check_geometry(reference)


def _text(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_sample(sample: SpanSample, spec: SampleSpec) -> bytes:
    _check_sample(sample, spec)
    parts = [
        _text(sample.recording_id),
        _text(sample.tag),
        struct.pack("<d", sample.sample_time),
        struct.pack("<3d", *sample.origin),
        struct.pack("<8d", *sample.anchor.row()),
        struct.pack("<4d", *sample.current_gaze.row()),
        struct.pack("<H", len(sample.future_gaze)),
    ]
    parts.extend(struct.pack("<4d", *g.row()) for g in sample.future_gaze)
    parts.append(np.concatenate([g.words for g in sample.grids()]).astype("<u8").tobytes())
    return b"".join(parts)


def write_archive(samples: Sequence[SpanSample], path, spec: SampleSpec) -> Path:
    """Write samples sharing `spec`; the file is replaced only once fully encoded."""
    body = [encode_sample(s, spec) for s in samples]
    spec_json = orjson.dumps(spec.model_dump(mode="json"))
    header = MAGIC + struct.pack("<HI", VERSION, len(spec_json)) + spec_json + struct.pack("<I", len(body))
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(header + b"".join(body))
    logger.info("wrote %d samples to %s", len(body), out)
    return out


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveFormatError(f"archive truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ArchiveFormatError(f"invalid utf-8 string at byte {self.pos - n}") from e


def _read_header(reader: _Reader) -> Tuple[SampleSpec, int]:
    if reader.take(4) != MAGIC:
        raise ArchiveFormatError("not a sample archive (bad magic)")
    version, spec_len = reader.unpack("<HI")
    if version != VERSION:
        raise ArchiveFormatError(f"unsupported archive version {version} (expected {VERSION})")
    try:
        spec = SampleSpec.model_validate(orjson.loads(reader.take(spec_len)))
    except (orjson.JSONDecodeError, ValueError) as e:
        raise ArchiveFormatError(f"invalid SampleSpec block: {e}") from e
    (count,) = reader.unpack("<I")
    return spec, count


def _decode_sample(reader: _Reader, spec: SampleSpec) -> SpanSample:
    cfg = spec.cfg
    recording_id = reader.text()
    tag = reader.text()
    (sample_time,) = reader.unpack("<d")
    origin = reader.unpack("<3d")
    t, *quat_trans = reader.unpack("<8d")
    anchor = Pose(np.array(quat_trans[:4]), np.array(quat_trans[4:]), t)
    g = reader.unpack("<4d")
    current = GazeSample(np.array(g[1:]), g[0])
    (n_future,) = reader.unpack("<H")
    future = []
    for _ in range(n_future):
        fg = reader.unpack("<4d")
        future.append(GazeSample(np.array(fg[1:]), fg[0]))

    words = words_per_grid(cfg.resolution)
    count = grids_per_sample(spec)
    block = np.frombuffer(reader.take(count * words * 8), dtype="<u8").reshape(count, words)
    grids = [OccupancyGrid(cfg.resolution, cfg.cube_length_m, origin, block[i].copy()) for i in range(count)]

    tau = spec.ticks(sample_time)
    inputs = []
    width = len(CHANNELS)
    for f in range(spec.past_frames):
        chunk = grids[f * width:(f + 1) * width]
        inputs.append(
            MultiLevelSpan(dict(zip(LEVELS, chunk[: len(LEVELS)])), chunk[-1], frame_window(tau, f, spec))
        )
    target = dict(zip(LEVELS, grids[spec.past_frames * width:]))
    return SpanSample(
        inputs=tuple(inputs),
        target=target,
        anchor=anchor,
        current_gaze=current,
        recording_id=recording_id,
        sample_time=sample_time,
        tag=tag,
        future_gaze=tuple(future),
    )


def read_archive(path, expect: Optional[SampleSpec] = None) -> Tuple[SampleSpec, List[SpanSample]]:
    """Decode a whole archive; nothing is returned unless every sample decodes."""
    reader = _Reader(Path(path).read_bytes())
    spec, count = _read_header(reader)
    if expect is not None:
        for name in ("cube_length_m", "resolution"):
            if getattr(spec.cfg, name) != getattr(expect.cfg, name):
                raise ArchiveFormatError(
                    f"archive {name}={getattr(spec.cfg, name)} does not match expected {getattr(expect.cfg, name)}"
                )
        if spec.past_frames != expect.past_frames:
            raise ArchiveFormatError(f"archive has {spec.past_frames} input frames, expected {expect.past_frames}")
    try:
        samples = [_decode_sample(reader, spec) for _ in range(count)]
    except ValueError as e:
        if isinstance(e, ArchiveFormatError):
            raise
        raise ArchiveFormatError(f"corrupt sample payload: {e}") from e
    if reader.pos != len(reader.data):
        raise ArchiveFormatError(f"{len(reader.data) - reader.pos} trailing bytes after {count} samples")
    logger.info("read %d samples from %s", count, path)
    return spec, samples
