"""Synthetic grayscale front camera: sky, ground, lane edges, obstacle silhouettes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..core import CameraFrame

SKY, GROUND, LANE, OBSTACLE = 200, 90, 255, 40


@dataclass(frozen=True)
class CameraSpec:
    width: int = 160
    height: int = 120
    hfov_deg: float = 90.0
    mount_height: float = 1.5
    stream_id: str = "camera_front"

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / np.tan(np.radians(self.hfov_deg) / 2.0)

    @cached_property
    def background(self) -> np.ndarray:
        img = np.full((self.height, self.width), GROUND, np.uint8)
        img[: self.height // 2] = SKY
        return img


def _project(spec: CameraSpec, pts_ego: np.ndarray):
    """Pinhole projection of ego-frame points; returns (u, v, in_front)."""
    fwd = pts_ego[:, 0]
    left = pts_ego[:, 1]
    up = pts_ego[:, 2] - spec.mount_height
    front = fwd > 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        u = spec.width / 2.0 - spec.focal * left / fwd
        v = spec.height / 2.0 - spec.focal * up / fwd
    return u, v, front


def _to_ego(world, xyz_world):
    ego = world.ego
    c, s = np.cos(ego.yaw), np.sin(ego.yaw)
    dx = xyz_world[:, 0] - ego.x
    dy = xyz_world[:, 1] - ego.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy, xyz_world[:, 2]], axis=1)


def render_camera(world, spec: CameraSpec) -> CameraFrame:
    img = spec.background.copy()
    route = world.route
    s0, _ = route.project([(world.ego.x, world.ego.y)])
    s = np.linspace(s0[0], min(s0[0] + 60.0, route.length), 60)
    center = route.points_at(s)
    tangent = np.gradient(center, axis=0)
    norm = np.hypot(tangent[:, 0], tangent[:, 1])
    norm[norm == 0] = 1.0
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1) / norm[:, None]
    for side in (-1.0, 1.0):
        edge = center + side * route.lane_width / 2.0 * normal
        u, v, front = _project(spec, _to_ego(world, np.column_stack([edge, np.zeros(len(edge))])))
        ok = front & (u >= 0) & (u < spec.width) & (v >= 0) & (v < spec.height)
        img[v[ok].astype(int), u[ok].astype(int)] = LANE

    for o in world.obstacles:
        xs = (o.x - o.length / 2, o.x + o.length / 2)
        ys = (o.y - o.width / 2, o.y + o.width / 2)
        corners = np.array([(x, y, z) for x in xs for y in ys for z in (0.0, o.height)])
        u, v, front = _project(spec, _to_ego(world, corners))
        if not front.all():
            continue
        u0, u1 = np.clip([u.min(), u.max()], 0, spec.width).astype(int)
        v0, v1 = np.clip([v.min(), v.max()], 0, spec.height).astype(int)
        img[v0:v1, u0:u1] = OBSTACLE
    return CameraFrame(world.frame_id, world.sim_time, spec.width, spec.height, img, spec.stream_id)
