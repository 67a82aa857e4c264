"""Ring-pattern LiDAR ray caster against the ground plane and obstacle boxes."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..core import PointCloud
from ..maskgen import DEFAULT_RING_ELEVATIONS_DEG, SensorPose

GROUND_REFLECTIVITY = 0.3
OBSTACLE_REFLECTIVITY = 0.8


@dataclass(frozen=True)
class LidarSpec:
    ring_elevations_deg: tuple[float, ...] = DEFAULT_RING_ELEVATIONS_DEG
    azimuth_resolution_deg: float = 0.5
    max_range: float = 100.0
    mount: SensorPose = field(default_factory=lambda: SensorPose(0.0, 0.0, 1.8, 0.0))
    stream_id: str = "lidar_top"

    def __post_init__(self):
        rings = tuple(float(r) for r in self.ring_elevations_deg)
        if list(rings) != sorted(rings):
            raise ValueError("ring elevations must be sorted")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        object.__setattr__(self, "ring_elevations_deg", rings)

    @property
    def ring_count(self) -> int:
        return len(self.ring_elevations_deg)

    @property
    def azimuth_count(self) -> int:
        return int(round(360.0 / self.azimuth_resolution_deg))

    @cached_property
    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions in the ego frame (ring-major) and their ring index."""
        elev = np.radians(np.asarray(self.ring_elevations_deg))
        az = np.radians(np.arange(self.azimuth_count) * self.azimuth_resolution_deg - 180.0) + self.mount.yaw
        e, a = np.meshgrid(elev, az, indexing="ij")
        dirs = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
        ring = np.repeat(np.arange(len(elev), dtype=np.int16), len(az))
        return dirs, ring


def _ray_boxes(origin, dirs, lo, hi):
    """Nearest positive slab-intersection distance per ray over all boxes (inf if none)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs  # (n, 3)
        t1 = (lo[None] - origin) * inv[:, None, :]  # (n, k, 3)
        t2 = (hi[None] - origin) * inv[:, None, :]
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= np.maximum(tmin, 0.0)) & (tmin > 0)
    t = np.where(hit, tmin, np.inf)
    return t.min(axis=1)


def lidar_scan(world, spec: LidarSpec) -> PointCloud:
    """Cast every (ring, azimuth) ray; return hits in the ego frame."""
    ego = world.ego
    dirs_ego, ring = spec.rays
    c, s = np.cos(ego.yaw), np.sin(ego.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    mount = spec.mount.origin
    origin = np.array([ego.x, ego.y, 0.0]) + rot @ mount
    dirs = dirs_ego @ rot.T

    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[:, 2] < 0, -origin[2] / dirs[:, 2], np.inf)
    t = t_ground
    refl = np.full(len(t), GROUND_REFLECTIVITY)
    if world.obstacles:
        obs = np.array([(o.x, o.y, o.length, o.width, o.height) for o in world.obstacles])
        lo = np.stack([obs[:, 0] - obs[:, 2] / 2, obs[:, 1] - obs[:, 3] / 2, np.zeros(len(obs))], axis=1)
        hi = np.stack([obs[:, 0] + obs[:, 2] / 2, obs[:, 1] + obs[:, 3] / 2, obs[:, 4]], axis=1)
        t_box = _ray_boxes(origin, dirs, lo, hi)
        closer = t_box < t
        t = np.where(closer, t_box, t)
        refl = np.where(closer, OBSTACLE_REFLECTIVITY, refl)

    hit = t <= spec.max_range
    r = t[hit]
    xyz = mount + r[:, None] * dirs_ego[hit]
    intensity = refl[hit] * (1.0 - r / spec.max_range)
    return PointCloud(world.frame_id, world.sim_time, xyz, intensity, ring[hit], spec.stream_id)
