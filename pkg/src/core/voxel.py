"""Binary occupancy grids and multi-level span assembly."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from ..config import FRAME_QUANTUM_S
from .errors import EmptyWindowError, GeometryMismatchError
from .geometry import classify_span, select_observed
from .models import (
    FORWARD,
    LEVELS,
    FrameBundle,
    KeypointCloud,
    Pose,
    SpanConfig,
    SpanDiagnostics,
)

logger = logging.getLogger(__name__)

WORD_BITS = 64


def words_per_grid(resolution: int) -> int:
    return -(-resolution**3 // WORD_BITS)


# ---------------------------- grid ---------------------------- #

@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """R×R×R bit grid, x-major then y then z, packed into little-endian 64-bit words."""

    resolution: int
    cube_length_m: float
    origin: Tuple[float, float, float]
    words: np.ndarray

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype="<u8").reshape(-1)
        if len(words) != words_per_grid(self.resolution):
            raise ValueError(
                f"expected {words_per_grid(self.resolution)} words for R={self.resolution}, got {len(words)}"
            )
        words.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "cube_length_m", float(self.cube_length_m))

    @classmethod
    def empty(cls, resolution: int, cube_length_m: float, origin) -> "OccupancyGrid":
        return cls(resolution, cube_length_m, origin, np.zeros(words_per_grid(resolution), dtype="<u8"))

    @classmethod
    def from_dense(cls, dense: np.ndarray, cube_length_m: float, origin) -> "OccupancyGrid":
        dense = np.asarray(dense, dtype=bool)
        r = dense.shape[0]
        if dense.shape != (r, r, r):
            raise ValueError(f"dense grid must be cubic, got {dense.shape}")
        bits = np.zeros(words_per_grid(r) * WORD_BITS, dtype=bool)
        bits[: r**3] = dense.reshape(-1)
        packed = np.packbits(bits, bitorder="little")
        return cls(r, cube_length_m, origin, packed.view("<u8"))

    def to_dense(self) -> np.ndarray:
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
        r = self.resolution
        return bits[: r**3].astype(bool).reshape(r, r, r)

    @property
    def cell_edge_m(self) -> float:
        return self.cube_length_m / self.resolution

    @property
    def nbytes(self) -> int:
        return self.words.nbytes

    def count(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def is_empty(self) -> bool:
        return not self.words.any()

    def cells(self) -> np.ndarray:
        """(N, 3) integer indices of set cells."""
        return np.argwhere(self.to_dense())

    def check_geometry(self, other: "OccupancyGrid") -> None:
        for name in ("resolution", "cube_length_m", "origin"):
            if getattr(self, name) != getattr(other, name):
                raise GeometryMismatchError(name, getattr(self, name), getattr(other, name))

    def _with(self, words: np.ndarray) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.cube_length_m, self.origin, words)

    def __or__(self, other: "OccupancyGrid") -> "OccupancyGrid":
        self.check_geometry(other)
        return self._with(self.words | other.words)

    def __and__(self, other: "OccupancyGrid") -> "OccupancyGrid":
        self.check_geometry(other)
        return self._with(self.words & other.words)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.cube_length_m == other.cube_length_m
            and self.origin == other.origin
            and np.array_equal(self.words, other.words)
        )

    __hash__ = None

    def issubset(self, other: "OccupancyGrid") -> bool:
        self.check_geometry(other)
        return not np.any(self.words & ~other.words)


def grid_union(a: OccupancyGrid, b: OccupancyGrid) -> OccupancyGrid:
    return a | b


def grid_intersection(a: OccupancyGrid, b: OccupancyGrid) -> OccupancyGrid:
    return a & b


def grid_count(a: OccupancyGrid) -> int:
    return a.count()


def union_all(grids: Iterable[OccupancyGrid]) -> OccupancyGrid:
    grids = list(grids)
    if not grids:
        raise EmptyWindowError("cannot take the union of zero grids")
    out = grids[0]
    for g in grids[1:]:
        out = out | g
    return out


# ---------------------------- voxelization ---------------------------- #

def grid_origin(anchor_pose: Pose, cfg: SpanConfig) -> Tuple[float, float, float]:
    return tuple(anchor_pose.translation - cfg.cube_length_m / 2)


def cell_indices(positions: np.ndarray, anchor: np.ndarray, cfg: SpanConfig) -> np.ndarray:
    """floor((p − t + D/2)·R/D); half-open cells."""
    d, r = cfg.cube_length_m, cfg.resolution
    return np.floor((positions - anchor + d / 2) * r / d).astype(np.int64)


def voxelize(points, anchor_pose: Pose, cfg: SpanConfig) -> OccupancyGrid:
    """Occupancy of `points` (a KeypointCloud or an (N, 3) array) in the grid anchored at the pose."""
    positions = points.positions if isinstance(points, KeypointCloud) else np.asarray(points, float).reshape(-1, 3)
    r = cfg.resolution
    dense = np.zeros((r, r, r), dtype=bool)
    if len(positions):
        idx = cell_indices(positions, anchor_pose.translation, cfg)
        inside = np.all((idx >= 0) & (idx < r), axis=1)
        idx = idx[inside]
        dense[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return OccupancyGrid.from_dense(dense, cfg.cube_length_m, grid_origin(anchor_pose, cfg))


# ---------------------------- multi-level spans ---------------------------- #

@dataclass(frozen=True, eq=False)
class MultiLevelSpan:
    levels: Dict[str, OccupancyGrid]
    scene: OccupancyGrid
    window: Tuple[float, float]

    def channels(self) -> Tuple[OccupancyGrid, ...]:
        """foveal, central, peripheral, orientation, scene."""
        return tuple(self.levels[name] for name in LEVELS) + (self.scene,)

    @classmethod
    def empty(cls, anchor: Pose, cfg: SpanConfig, window: Tuple[float, float]) -> "MultiLevelSpan":
        blank = OccupancyGrid.empty(cfg.resolution, cfg.cube_length_m, grid_origin(anchor, cfg))
        return cls({level: blank for level in LEVELS}, blank, window)


@dataclass(frozen=True, eq=False)
class LiftedFrame:
    """Selected and classified keypoints of one frame, before voxelization."""

    time: float
    observed: KeypointCloud
    levels: Dict[str, KeypointCloud]


def level_axis(level: str, gaze_direction: np.ndarray) -> np.ndarray:
    return FORWARD if level == "orientation" else gaze_direction


def classify_levels(
    observed: KeypointCloud,
    bundle: FrameBundle,
    cfg: SpanConfig,
    diagnostics: Optional[SpanDiagnostics] = None,
) -> Dict[str, KeypointCloud]:
    ecc = cfg.eccentricities_deg
    return {
        level: classify_span(
            observed, bundle.pose, level_axis(level, bundle.gaze.direction), ecc.of(level), diagnostics
        )
        for level in LEVELS
    }


def lift_frame(
    bundle: FrameBundle,
    cfg: SpanConfig,
    frame_quantum: float = FRAME_QUANTUM_S,
    diagnostics: Optional[SpanDiagnostics] = None,
) -> LiftedFrame:
    observed = select_observed(bundle.points, bundle.pose, bundle.time, cfg, frame_quantum, diagnostics)
    return LiftedFrame(bundle.time, observed, classify_levels(observed, bundle, cfg, diagnostics))


def assemble(frames: Sequence[LiftedFrame], anchor: Pose, cfg: SpanConfig) -> MultiLevelSpan:
    """Voxelize the union of lifted frames in the grid anchored at `anchor`."""
    if not frames:
        raise EmptyWindowError("span window contains zero frames")
    return MultiLevelSpan(
        levels={
            level: voxelize(KeypointCloud.concat([f.levels[level] for f in frames]), anchor, cfg)
            for level in LEVELS
        },
        scene=voxelize(KeypointCloud.concat([f.observed for f in frames]), anchor, cfg),
        window=(frames[0].time, frames[-1].time),
    )


def build_multilevel(
    bundles: Sequence[FrameBundle],
    cfg: SpanConfig,
    frame_quantum: float = FRAME_QUANTUM_S,
    anchor: Optional[Pose] = None,
    diagnostics: Optional[SpanDiagnostics] = None,
) -> MultiLevelSpan:
    """Union over frames of the per-level classified keypoints, voxelized at the window anchor.

    The anchor defaults to the pose of the first bundle (the window start).
    """
    if not bundles:
        raise EmptyWindowError("span window contains zero frames")
    lifted = [lift_frame(b, cfg, frame_quantum, diagnostics) for b in bundles]
    return assemble(lifted, anchor or bundles[0].pose, cfg)
