"""Domain types shared across the fuzzing framework.

All values are immutable after construction. Array-backed payloads
(point clouds, camera frames) are frozen by marking their buffers
read-only, so a frame handed to the broker can be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Literal

import numpy as np

LIDAR = "lidar"
CAMERA = "camera"

FINDING_KINDS = ("trajectory_deviation", "deceleration", "immobility", "collision", "timeout")


class ParameterError(ValueError):
    """Raised when a parameter vector violates its invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InfrastructureFailure(Exception):
    """A run produced no usable data (crash, empty trajectory, endpoint loss)."""


def round_half_away(values):
    """Round half away from zero; works on scalars and arrays."""
    arr = np.asarray(values, dtype=float)
    out = np.sign(arr) * np.floor(np.abs(arr) + 0.5)
    if out.ndim == 0:
        return int(out)
    return out.astype(np.int64)


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SensorMeta:
    """What the mutator and validator know about one sensor stream."""

    stream_id: str
    kind: Literal["lidar", "camera"] = LIDAR
    perception_range: float = 100.0
    width: int | None = None  # camera only
    height: int | None = None


@dataclass(frozen=True)
class SensorFuzzParams:
    """Parameter vector for one sensor fuzzing iteration on one stream.

    ``center_x``/``center_y`` are fractions of the mask width/height and
    ``dispersion`` is the standard deviation relative to width/height.
    """

    change_ratio: float
    dispersion: float
    center_x: float
    center_y: float
    mask_width: int
    mask_height: int
    intensity: float
    distance: float = 30.0
    stream_id: str = "lidar_top"

    @property
    def sample_count(self) -> int:
        """Number of coordinates drawn per mask, round(W*H*r_f)."""
        return round_half_away(self.mask_width * self.mask_height * self.change_ratio)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> SensorFuzzParams:
        return cls(**data)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_params(p: SensorFuzzParams, sensor_meta: SensorMeta) -> ValidationResult:
    """Check every field invariant of ``p`` against the targeted sensor.

    Violations are returned as data; nothing is raised.
    """
    v = []

    def finite(name, value):
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            v.append(f"{name} must be a finite number")
            return False
        return True

    if finite("change_ratio", p.change_ratio) and not 0.0 <= p.change_ratio <= 1.0:
        v.append("change ratio out of [0,1]")
    if finite("dispersion", p.dispersion) and p.dispersion < 0.0:
        v.append("dispersion must be >= 0")
    if finite("center_x", p.center_x) and not 0.0 <= p.center_x <= 1.0:
        v.append("center_x out of [0,1]")
    if finite("center_y", p.center_y) and not 0.0 <= p.center_y <= 1.0:
        v.append("center_y out of [0,1]")
    for name in ("mask_width", "mask_height"):
        value = getattr(p, name)
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
            v.append(f"{name} must be a positive integer")
    if finite("intensity", p.intensity) and not 0.0 <= p.intensity <= 1.0:
        v.append("intensity out of [0,1]")
    if p.stream_id != sensor_meta.stream_id:
        v.append(f"stream_id {p.stream_id!r} does not match sensor {sensor_meta.stream_id!r}")

    if sensor_meta.kind == LIDAR:
        if finite("distance", p.distance):
            if p.distance <= 0.0:
                v.append("distance must be > 0")
            elif p.distance > sensor_meta.perception_range:
                v.append("distance exceeds perception range")
    elif sensor_meta.kind == CAMERA:
        if sensor_meta.width is not None and p.mask_width != sensor_meta.width:
            v.append("mask_width must equal camera width")
        if sensor_meta.height is not None and p.mask_height != sensor_meta.height:
            v.append("mask_height must equal camera height")
    else:
        v.append(f"unknown stream kind {sensor_meta.kind!r}")
    return ValidationResult(tuple(v))


def require_valid(p: SensorFuzzParams, sensor_meta: SensorMeta) -> None:
    result = validate_params(p, sensor_meta)
    if not result.ok:
        raise ParameterError(result.violations)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """LiDAR frame in the ego frame (x forward, y left, z up, meters)."""

    frame_id: int
    sim_time: int  # ms
    xyz: np.ndarray
    intensity: np.ndarray
    ring: np.ndarray
    stream_id: str = "lidar_top"

    def __post_init__(self):
        xyz = _frozen(self.xyz, np.float64).reshape(-1, 3)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", _frozen(self.intensity, np.float64).reshape(-1))
        object.__setattr__(self, "ring", _frozen(self.ring, np.int16).reshape(-1))
        if not (len(self.intensity) == len(self.ring) == len(xyz)):
            raise ValueError("point cloud field lengths differ")

    def __len__(self) -> int:
        return len(self.xyz)

    def is_well_formed(self, ring_count: int) -> bool:
        return bool(
            np.isfinite(self.xyz).all()
            and np.isfinite(self.intensity).all()
            and ((self.ring >= 0) & (self.ring < ring_count)).all()
        )

    @classmethod
    def empty(cls, frame_id=0, sim_time=0, stream_id="lidar_top") -> PointCloud:
        return cls(frame_id, sim_time, np.zeros((0, 3)), np.zeros(0), np.zeros(0, np.int16), stream_id)


@dataclass(frozen=True, eq=False)
class CameraFrame:
    """Grayscale camera frame; ``pixels`` has shape (height, width), uint8."""

    frame_id: int
    sim_time: int
    width: int
    height: int
    pixels: np.ndarray
    stream_id: str = "camera_front"

    def __post_init__(self):
        pixels = _frozen(self.pixels, np.uint8)
        if pixels.size != self.width * self.height:
            raise ValueError("pixel buffer length must equal width*height")
        object.__setattr__(self, "pixels", pixels.reshape(self.height, self.width))


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned static box in world coordinates; (x, y) is its center."""

    x: float
    y: float
    width: float  # along world y
    length: float  # along world x
    height: float = 1.5


@dataclass(frozen=True)
class ScenarioParams:
    route_id: str
    goal: tuple[float, float]
    target_speed: float
    static_obstacles: tuple[Obstacle, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "goal", tuple(float(c) for c in self.goal))
        obstacles = tuple(
            o if isinstance(o, Obstacle) else Obstacle(**o) if isinstance(o, dict) else Obstacle(*o)
            for o in self.static_obstacles
        )
        object.__setattr__(self, "static_obstacles", obstacles)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["goal"] = list(self.goal)
        d["static_obstacles"] = [asdict(o) for o in self.static_obstacles]
        return d

    @classmethod
    def from_dict(cls, data) -> ScenarioParams:
        data = dict(data)
        return cls(**data)


@dataclass(frozen=True)
class TrajectoryRecord:
    sim_time: int  # ms
    x: float
    y: float
    yaw: float
    speed: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ControlCommand:
    steering: float = 0.0  # rad
    accel: float = 0.0  # m/s^2


@dataclass(frozen=True)
class Finding:
    kind: str
    iteration_id: str
    sensor_params: tuple[SensorFuzzParams, ...]
    scenario_params: ScenarioParams
    evidence: dict[str, Any] = field(default_factory=dict)
    finding_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "finding_id": self.finding_id,
            "kind": self.kind,
            "iteration_id": self.iteration_id,
            "sensor_params": [p.to_dict() for p in self.sensor_params],
            "scenario_params": self.scenario_params.to_dict(),
            "evidence": dict(self.evidence),
        }

    @classmethod
    def from_dict(cls, data) -> Finding:
        return cls(
            kind=data["kind"],
            iteration_id=data["iteration_id"],
            sensor_params=tuple(SensorFuzzParams.from_dict(p) for p in data["sensor_params"]),
            scenario_params=ScenarioParams.from_dict(data["scenario_params"]),
            evidence=dict(data["evidence"]),
            finding_id=data.get("finding_id", ""),
        )


def trajectory_is_time_sorted(trajectory) -> bool:
    times = [r.sim_time for r in trajectory]
    return all(a < b for a, b in zip(times, times[1:]))


@dataclass(frozen=True)
class IterationRecord:
    """Everything persisted about one sensor fuzzing iteration."""

    campaign_index: int
    scenario_index: int
    sensor_index: int
    scenario_params: ScenarioParams
    sensor_params: tuple[SensorFuzzParams, ...]
    rng_seed: int
    masks: dict[str, dict[str, Any]]
    status: str  # finished | finding | failed
    finding_ids: tuple[str, ...] = ()
    finding_kinds: tuple[str, ...] = ()
    metrics: dict[str, Any] | None = None
    trajectory_summary: dict[str, Any] = field(default_factory=dict)
    frame_counts: dict[str, int] = field(default_factory=dict)
    failure: str | None = None

    @property
    def iteration_id(self) -> str:
        return iteration_id(self.campaign_index, self.scenario_index, self.sensor_index)

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration_id": self.iteration_id,
            "campaign_index": self.campaign_index,
            "scenario_index": self.scenario_index,
            "sensor_index": self.sensor_index,
            "scenario_params": self.scenario_params.to_dict(),
            "sensor_params": [p.to_dict() for p in self.sensor_params],
            "rng_seed": self.rng_seed,
            "masks": self.masks,
            "status": self.status,
            "finding_ids": list(self.finding_ids),
            "finding_kinds": list(self.finding_kinds),
            "metrics": self.metrics,
            "trajectory_summary": self.trajectory_summary,
            "frame_counts": self.frame_counts,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, d) -> IterationRecord:
        return cls(
            campaign_index=d["campaign_index"],
            scenario_index=d["scenario_index"],
            sensor_index=d["sensor_index"],
            scenario_params=ScenarioParams.from_dict(d["scenario_params"]),
            sensor_params=tuple(SensorFuzzParams.from_dict(p) for p in d["sensor_params"]),
            rng_seed=d["rng_seed"],
            masks=d["masks"],
            status=d["status"],
            finding_ids=tuple(d["finding_ids"]),
            finding_kinds=tuple(d["finding_kinds"]),
            metrics=d["metrics"],
            trajectory_summary=d["trajectory_summary"],
            frame_counts=d["frame_counts"],
            failure=d["failure"],
        )


def iteration_id(campaign_index: int, scenario_index: int, sensor_index: int) -> str:
    return f"{campaign_index}-{scenario_index}-{sensor_index}"
