"""Fuzzing-mask generation and its application to camera and LiDAR frames.

A mask is a set of integer cells on a ``W x H`` grid. For a camera the
cells are pixels; for a LiDAR they are positions on a plane placed
``distance`` meters in front of the sensor, perpendicular to its forward
axis, so injected points never shadow one another.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .core import (
    CAMERA,
    LIDAR,
    CameraFrame,
    PointCloud,
    SensorFuzzParams,
    SensorMeta,
    require_valid,
    round_half_away,
)

DEFAULT_RING_ELEVATIONS_DEG = tuple(np.linspace(-15.0, 15.0, 16))


@dataclass(frozen=True)
class FuzzingMask:
    width: int
    height: int
    cells: np.ndarray  # (n, 2) int64, unique rows sorted lexicographically by (x, y)
    requested_count: int = 0

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        if len(cells):
            cells = np.unique(cells, axis=0)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @property
    def coords(self) -> frozenset[tuple[int, int]]:
        return frozenset(map(tuple, self.cells.tolist()))

    @property
    def effective_count(self) -> int:
        return len(self.cells)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.width}x{self.height}:".encode())
        h.update(self.cells.tobytes())
        return h.hexdigest()

    def in_bounds(self) -> bool:
        x, y = self.cells[:, 0], self.cells[:, 1]
        return bool(((x >= 0) & (x <= self.width) & (y >= 0) & (y <= self.height)).all())

    def __eq__(self, other):
        if not isinstance(other, FuzzingMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.cells, other.cells)
        )

    def __hash__(self):
        return hash(self.digest())


def sample_mask_coordinates(p: SensorFuzzParams, rng: np.random.Generator):
    """Draw the raw (pre-rounding, pre-clamp) x and y samples for a mask."""
    n = p.sample_count
    sigma_x = p.mask_width * p.dispersion
    sigma_y = p.mask_height * p.dispersion
    xs = rng.normal(p.center_x * p.mask_width, sigma_x, n)
    ys = rng.normal(p.center_y * p.mask_height, sigma_y, n)
    return xs, ys


def generate_mask(p: SensorFuzzParams, rng_seed: int, sensor_meta: SensorMeta | None = None) -> FuzzingMask:
    """Generate the fuzzing mask for ``p``.

    Samples ``round(W*H*r_f)`` x/y coordinates from normals centred on
    ``(X*W, Y*H)`` with standard deviations ``(sigma_f*W, sigma_f*H)``,
    rounds them to cells, clamps them into ``[0, W] x [0, H]`` and
    collapses duplicates.

    Args:
        p: Sensor fuzzing parameters.
        rng_seed: Seed for the sampler; equal seeds give equal masks.
        sensor_meta: Target sensor; defaults to an unbounded LiDAR stream
            matching ``p.stream_id``.

    Raises:
        ParameterError: ``p`` fails validation.
    """
    if sensor_meta is None:
        sensor_meta = SensorMeta(p.stream_id, LIDAR, perception_range=float("inf"))
    require_valid(p, sensor_meta)
    rng = np.random.default_rng(rng_seed)
    xs, ys = sample_mask_coordinates(p, rng)
    x = np.clip(round_half_away(xs), 0, p.mask_width) if len(xs) else np.zeros(0, np.int64)
    y = np.clip(round_half_away(ys), 0, p.mask_height) if len(ys) else np.zeros(0, np.int64)
    return FuzzingMask(p.mask_width, p.mask_height, np.column_stack([x, y]), requested_count=len(xs))


def apply_camera(frame: CameraFrame, mask: FuzzingMask, p: SensorFuzzParams) -> CameraFrame:
    """Overwrite masked pixels with grayscale ``round(I*255)``.

    Cells on the far edge (x == W or y == H) fall outside the pixel grid
    and are skipped.
    """
    if mask.width != frame.width or mask.height != frame.height:
        raise ValueError(
            f"mask {mask.width}x{mask.height} does not match frame {frame.width}x{frame.height}"
        )
    if not mask.effective_count:
        return frame
    x, y = mask.cells[:, 0], mask.cells[:, 1]
    keep = (x < frame.width) & (y < frame.height)
    pixels = frame.pixels.copy()
    pixels[y[keep], x[keep]] = round_half_away(p.intensity * 255)
    return CameraFrame(frame.frame_id, frame.sim_time, frame.width, frame.height, pixels, frame.stream_id)


@dataclass(frozen=True)
class PlaneSpec:
    """Geometry of the LiDAR injection plane; ``cell_size`` is meters per cell."""

    cell_size: float = 0.1

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")


@dataclass(frozen=True)
class SensorPose:
    """Sensor mount in the point-cloud frame: position and heading (rad)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def forward(self) -> np.ndarray:
        return np.array([np.cos(self.yaw), np.sin(self.yaw), 0.0])

    @property
    def right(self) -> np.ndarray:
        return np.array([np.sin(self.yaw), -np.cos(self.yaw), 0.0])


def plane_points(mask: FuzzingMask, p: SensorFuzzParams, spec: PlaneSpec, sensor_pose: SensorPose) -> np.ndarray:
    """Positions of the injected points, one per mask cell, shape (n, 3)."""
    cells = mask.cells.astype(float)
    right = (cells[:, 0] - mask.width / 2.0) * spec.cell_size
    up = (mask.height / 2.0 - cells[:, 1]) * spec.cell_size
    return (
        sensor_pose.origin
        + p.distance * sensor_pose.forward
        + right[:, None] * sensor_pose.right
        + up[:, None] * np.array([0.0, 0.0, 1.0])
    )


def nearest_ring(points: np.ndarray, sensor_pose: SensorPose, ring_elevations_deg) -> np.ndarray:
    rel = points - sensor_pose.origin
    elev = np.degrees(np.arctan2(rel[:, 2], np.hypot(rel[:, 0], rel[:, 1])))
    rings = np.asarray(ring_elevations_deg, dtype=float)
    return np.abs(elev[:, None] - rings[None, :]).argmin(axis=1).astype(np.int16)


def project_and_inject_lidar(
    cloud: PointCloud,
    mask: FuzzingMask,
    p: SensorFuzzParams,
    spec: PlaneSpec = PlaneSpec(),
    sensor_pose: SensorPose = SensorPose(),
    ring_elevations_deg=DEFAULT_RING_ELEVATIONS_DEG,
) -> PointCloud:
    """Append one point per mask cell on the plane ``distance`` ahead.

    Original points keep their values and order; appended points carry
    intensity ``I`` and the ring index closest to their elevation.
    """
    if not mask.effective_count:
        return cloud
    pts = plane_points(mask, p, spec, sensor_pose)
    return _append(cloud, pts, np.full(len(pts), p.intensity), nearest_ring(pts, sensor_pose, ring_elevations_deg))


def _append(cloud: PointCloud, pts, intensity, ring) -> PointCloud:
    return PointCloud(
        cloud.frame_id,
        cloud.sim_time,
        np.concatenate([cloud.xyz, pts]),
        np.concatenate([cloud.intensity, intensity]),
        np.concatenate([cloud.ring, ring]),
        cloud.stream_id,
    )


@runtime_checkable
class SensorFuzzerPlugin(Protocol):
    """A fuzzer responsible for exactly one sensor stream."""

    stream_id: str
    kind: str

    def apply(self, frame, mask: FuzzingMask, params: SensorFuzzParams): ...


@dataclass
class CameraFuzzer:
    stream_id: str = "camera_front"
    kind: str = CAMERA

    def apply(self, frame: CameraFrame, mask: FuzzingMask, params: SensorFuzzParams) -> CameraFrame:
        return apply_camera(frame, mask, params)


@dataclass
class LidarFuzzer:
    """Injects a mask plane into every frame of a LiDAR stream.

    The inserted geometry depends only on (mask, params), so it is computed
    once per iteration and reused for every frame.
    """

    stream_id: str = "lidar_top"
    plane: PlaneSpec = PlaneSpec()
    sensor_pose: SensorPose = SensorPose()
    ring_elevations_deg: tuple = DEFAULT_RING_ELEVATIONS_DEG
    kind: str = LIDAR
    _cache: tuple | None = field(default=None, repr=False)

    def injected(self, mask: FuzzingMask, params: SensorFuzzParams):
        if self._cache is not None and self._cache[0] is mask and self._cache[1] == params:
            return self._cache[2]
        pts = plane_points(mask, params, self.plane, self.sensor_pose)
        payload = (pts, np.full(len(pts), params.intensity), nearest_ring(pts, self.sensor_pose, self.ring_elevations_deg))
        self._cache = (mask, params, payload)
        return payload

    def apply(self, frame: PointCloud, mask: FuzzingMask, params: SensorFuzzParams) -> PointCloud:
        if not mask.effective_count:
            return frame
        return _append(frame, *self.injected(mask, params))
