from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

from ..config import FRAME_QUANTUM_S

# ---------------------------- levels ---------------------------- #

LEVELS: Tuple[str, ...] = ("foveal", "central", "peripheral", "orientation")
CHANNELS: Tuple[str, ...] = LEVELS + ("scene",)
Level = Literal["foveal", "central", "peripheral", "orientation"]

FORWARD = np.array([0.0, 0.0, 1.0])

_UNIT_TOL = 1e-9


def _multiple_of(value: float, step: float) -> bool:
    ratio = value / step
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


# ---------------------------- span configuration ---------------------------- #

class Eccentricities(BaseModel):
    model_config = ConfigDict(frozen=True)

    foveal: float = 2.0
    central: float = 8.0
    peripheral: float = 30.0
    orientation: float = 55.0

    @model_validator(mode="after")
    def _strictly_increasing(self) -> "Eccentricities":
        values = [self.foveal, self.central, self.peripheral, self.orientation]
        if not all(0.0 < v < 180.0 for v in values):
            raise ValueError("eccentricities must lie in (0, 180) degrees")
        if not all(a < b for a, b in zip(values, values[1:])):
            raise ValueError("eccentricities must satisfy foveal < central < peripheral < orientation")
        return self

    def of(self, level: str) -> float:
        return float(getattr(self, level))


class SpanConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    cube_length_m: float = Field(3.2, gt=0)
    resolution: int = Field(16, ge=2)
    eccentricities_deg: Eccentricities = Field(default_factory=Eccentricities)
    outlier_neighbors: int = Field(16, ge=1)
    outlier_std_ratio: float = Field(2.0, ge=0)
    outlier_filter: bool = True

    @property
    def cell_edge_m(self) -> float:
        return self.cube_length_m / self.resolution


class SampleSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_past_s: float = Field(2.0, gt=0)
    t_future_s: float = Field(2.0, gt=0)
    stride_s: float = Field(1.0, gt=0)
    frame_duration_s: float = Field(1.0, gt=0)
    frame_quantum_s: float = Field(default_factory=lambda: FRAME_QUANTUM_S, gt=0)
    cfg: SpanConfig = Field(default_factory=SpanConfig)

    @model_validator(mode="after")
    def _check_multiples(self) -> "SampleSpec":
        for name in ("t_past_s", "t_future_s"):
            if not _multiple_of(getattr(self, name), self.frame_duration_s):
                raise ValueError(f"{name} must be an integer multiple of frame_duration_s")
        for name in ("frame_duration_s", "stride_s"):
            if not _multiple_of(getattr(self, name), self.frame_quantum_s):
                raise ValueError(f"{name} must be an integer multiple of frame_quantum_s")
        return self

    def ticks(self, seconds: float) -> int:
        return int(round(seconds / self.frame_quantum_s))

    @property
    def past_frames(self) -> int:
        return int(round(self.t_past_s / self.frame_duration_s))


# ---------------------------- geometry primitives ---------------------------- #

@dataclass(frozen=True, eq=False)
class Pose:
    """Local (central pupil, z forward) to world transform at time `at`."""

    rotation: np.ndarray      # unit quaternion (w, x, y, z)
    translation: np.ndarray   # meters, world frame
    at: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > _UNIT_TOL:
            raise ValueError(f"pose quaternion is not unit: norm={np.linalg.norm(q)!r}")
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "at", float(self.at))

    @classmethod
    def identity(cls, at: float = 0.0) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), at)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, translation: np.ndarray, at: float = 0.0) -> "Pose":
        x, y, z, w = Rotation.from_matrix(matrix).as_quat()
        q = np.array([w, x, y, z])
        return cls(q / np.linalg.norm(q), translation, at)

    @cached_property
    def matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w]).as_matrix()

    def inverse(self) -> "Pose":
        r_inv = self.matrix.T
        return Pose.from_matrix(r_inv, -r_inv @ self.translation, self.at)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first."""
        return Pose.from_matrix(
            self.matrix @ other.matrix,
            self.matrix @ other.translation + self.translation,
            self.at,
        )

    def transform_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.translation

    def transform_to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.matrix

    def row(self) -> Tuple[float, ...]:
        return (self.at, *self.rotation.tolist(), *self.translation.tolist())


@dataclass(frozen=True, eq=False)
class GazeSample:
    direction: np.ndarray     # unit vector, local frame
    at: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(g) - 1.0) > _UNIT_TOL:
            raise ValueError(f"gaze direction is not unit: norm={np.linalg.norm(g)!r}")
        object.__setattr__(self, "direction", g)
        object.__setattr__(self, "at", float(self.at))

    def row(self) -> Tuple[float, ...]:
        return (self.at, *self.direction.tolist())


@dataclass(frozen=True, eq=False)
class KeypointCloud:
    """A set of semidense keypoints stored column-wise."""

    positions: np.ndarray          # (N, 3) world frame
    inv_dist_variance: np.ndarray  # (N,)
    observed_at: np.ndarray        # (N,)

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.inv_dist_variance, dtype=np.float64).reshape(-1)
        t = np.asarray(self.observed_at, dtype=np.float64).reshape(-1)
        if not (len(p) == len(s) == len(t)):
            raise ValueError("keypoint columns differ in length")
        if not np.all(np.isfinite(p)):
            raise ValueError("keypoint positions must be finite")
        if np.any(s < 0):
            raise ValueError("inv_dist_variance must be >= 0")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "inv_dist_variance", s)
        object.__setattr__(self, "observed_at", t)

    @classmethod
    def empty(cls) -> "KeypointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    @classmethod
    def concat(cls, clouds: Sequence["KeypointCloud"]) -> "KeypointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.inv_dist_variance for c in clouds]),
            np.concatenate([c.observed_at for c in clouds]),
        )

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, selector) -> "KeypointCloud":
        return KeypointCloud(
            self.positions[selector], self.inv_dist_variance[selector], self.observed_at[selector]
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray          # (M,)
    quaternions: np.ndarray    # (M, 4) w, x, y, z
    translations: np.ndarray   # (M, 3)

    def __len__(self) -> int:
        return len(self.times)

    def pose(self, index: int) -> Pose:
        return Pose(self.quaternions[index], self.translations[index], self.times[index])

    @classmethod
    def from_poses(cls, poses: Sequence[Pose]) -> "Trajectory":
        return cls(
            np.array([p.at for p in poses], dtype=np.float64).reshape(-1),
            np.array([p.rotation for p in poses], dtype=np.float64).reshape(-1, 4),
            np.array([p.translation for p in poses], dtype=np.float64).reshape(-1, 3),
        )


@dataclass(frozen=True, eq=False)
class GazeStream:
    times: np.ndarray          # (G,)
    directions: np.ndarray     # (G, 3) local frame

    def __len__(self) -> int:
        return len(self.times)

    def sample(self, index: int) -> GazeSample:
        return GazeSample(self.directions[index], self.times[index])


@dataclass(frozen=True, eq=False)
class Streams:
    points: KeypointCloud
    trajectory: Trajectory
    gaze: GazeStream
    recording_id: str = "recording"
    tag: str = ""


@dataclass(frozen=True, eq=False)
class FrameBundle:
    """Keypoints observed in one frame quantum with their pose and gaze."""

    tick: int
    time: float
    pose: Pose
    gaze: GazeSample
    points: KeypointCloud


@dataclass
class SpanDiagnostics:
    degenerate_points: int = 0
    outliers_removed: int = 0
    dropped_frames: List[float] = field(default_factory=list)


# ---------------------------- synthetic world ---------------------------- #

Vec3 = Tuple[float, float, float]


class ClusterSpec(BaseModel):
    center: Vec3
    radius: float = Field(0.15, gt=0)
    point_count: int = Field(400, ge=1)
    surface_noise_m: float = Field(0.0, ge=0)


class DynamicObjectSpec(BaseModel):
    path: List[Vec3] = Field(min_length=1)
    cluster: ClusterSpec


class SceneSpec(BaseModel):
    seed: int = Field(0, ge=0, lt=2**64)
    room_extent_m: Vec3 = (6.0, 6.0, 3.0)
    object_clusters: List[ClusterSpec] = Field(default_factory=list)
    wall_point_density: float = Field(50.0, ge=0)
    dynamic_objects: List[DynamicObjectSpec] = Field(default_factory=list)
    jitter_m: float = Field(0.005, ge=0, le=0.01)
    occlusion_bin_deg: float = Field(1.0, gt=0)
    occlusion_depth_tol_m: float = Field(0.1, ge=0)

    @field_validator("room_extent_m")
    @classmethod
    def _positive_extent(cls, v: Vec3) -> Vec3:
        if min(v) <= 0:
            raise ValueError("room_extent_m must be positive")
        return v

    def contains(self, point: Sequence[float], margin: float = 0.0) -> bool:
        ex, ey, ez = self.room_extent_m
        x, y, z = point
        return (
            abs(x) <= ex / 2 - margin and abs(y) <= ey / 2 - margin and margin <= z <= ez - margin
        )


class WalkSpec(BaseModel):
    waypoints: List[Vec3] = Field(min_length=1)
    speed_mps: float = Field(0.5, ge=0)


class GazeStep(BaseModel):
    target: int = Field(ge=0)
    fixation_s: float = Field(gt=0)
    saccade_s: float = Field(0.1, ge=0)


class BehaviorSpec(BaseModel):
    seed: int = Field(0, ge=0, lt=2**64)
    duration_s: float = Field(gt=0)
    walk: WalkSpec
    gaze_program: List[GazeStep] = Field(min_length=1)
    head_lag_deg: float = Field(10.0, ge=0, lt=90)

    @model_validator(mode="after")
    def _program_fits(self) -> "BehaviorSpec":
        total = sum(s.fixation_s + s.saccade_s for s in self.gaze_program)
        if total > self.duration_s + 1e-9:
            raise ValueError(
                f"gaze program lasts {total:.3f}s which exceeds duration_s={self.duration_s}"
            )
        return self


# ---------------------------- forecasting ---------------------------- #

class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_dim: int = Field(64, ge=1)
    encoder_widths: Tuple[int, ...] = (8, 16, 32)
    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    levels_out: int = 4
    resolution: int = Field(16, ge=2)
    frames: int = Field(2, ge=1)
    single_task_level: Optional[Level] = None
    use_global_embedding: bool = True
    use_history: bool = True
    loss: Literal["dice", "bce"] = "dice"
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _default_levels_out(cls, data):
        if isinstance(data, dict) and data.get("single_task_level") and "levels_out" not in data:
            data = {**data, "levels_out": 1}
        return data

    @model_validator(mode="after")
    def _check_shape(self) -> "ModelConfig":
        r = self.resolution
        if r & (r - 1):
            raise ValueError("resolution must be a power of two")
        if self.feature_dim % self.heads:
            raise ValueError("feature_dim must be divisible by heads")
        if not self.encoder_widths or min(self.encoder_widths) < 1:
            raise ValueError("encoder_widths must be positive")
        expected = 1 if self.single_task_level else 4
        if self.levels_out != expected:
            raise ValueError(f"levels_out must be {expected} for this variant")
        return self

    @property
    def stages(self) -> int:
        return self.resolution.bit_length() - 1

    @property
    def stage_widths(self) -> Tuple[int, ...]:
        widths = list(self.encoder_widths[: self.stages])
        widths += [widths[-1]] * (self.stages - len(widths))
        return tuple(widths)

    @property
    def output_levels(self) -> Tuple[str, ...]:
        return (self.single_task_level,) if self.single_task_level else LEVELS


class OptimizerSpec(BaseModel):
    lr: float = Field(1e-3, gt=0)
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(8, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    threshold: float = Field(0.5, gt=0, lt=1)


# ---------------------------- evaluation ---------------------------- #

class CameraModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    focal_px: float = Field(611.0, gt=0)
    principal_point_px: Tuple[float, float] = (704.0, 704.0)
    image_size_px: Tuple[float, float] = (1408.0, 1408.0)

    @model_validator(mode="after")
    def _principal_inside(self) -> "CameraModel":
        (cx, cy), (w, h) = self.principal_point_px, self.image_size_px
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ValueError("principal point must lie inside the image")
        return self


class LevelMetrics(BaseModel):
    iou: float = 0.0
    f1: float = 0.0
    precision: float = 0.0
    recall: float = 0.0


class DistanceStats(BaseModel):
    min: float
    avg: float
    max: float


class MetricReport(BaseModel):
    levels: Dict[str, LevelMetrics]
    foveal_distance_cm: Optional[DistanceStats] = None
    sample_count: int
    dropped_count: int = 0
    both_empty: Dict[str, int] = Field(default_factory=dict)
