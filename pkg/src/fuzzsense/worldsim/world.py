"""Lane world, route registry and the stepped kinematic bicycle simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import LineString, Point, Polygon, box

from ..core import CameraFrame, ControlCommand, Obstacle, PointCloud, ScenarioParams
from .camera import CameraSpec, render_camera
from .lidar import LidarSpec, lidar_scan

TICK_MS = 33
TICK_S = TICK_MS / 1000.0


@dataclass(frozen=True)
class Route:
    route_id: str
    centerline: tuple[tuple[float, float], ...]
    lane_width: float = 3.5

    def __post_init__(self):
        pts = np.asarray(self.centerline, dtype=float)
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        object.__setattr__(self, "_pts", pts)
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "_seg_len", seg_len)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg_len)]))

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    @property
    def start_pose(self) -> tuple[float, float, float]:
        dx, dy = self._seg[0]
        return float(self._pts[0, 0]), float(self._pts[0, 1]), math.atan2(dy, dx)

    def drivable_area(self) -> Polygon:
        return LineString(self.centerline).buffer(self.lane_width / 2.0, cap_style="flat")

    def project(self, xy):
        """Arc length and signed lateral offset (left positive) of points.

        Args:
            xy: (n, 2) world coordinates.

        Returns:
            (s, lateral) arrays of length n.
        """
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        rel = xy[:, None, :] - self._pts[None, :-1, :]
        t = (rel * self._seg[None]).sum(-1) / np.maximum(self._seg_len**2, 1e-12)
        t = np.clip(t, 0.0, 1.0)
        foot = self._pts[None, :-1, :] + t[..., None] * self._seg[None]
        d = xy[:, None, :] - foot
        dist = np.hypot(d[..., 0], d[..., 1])
        k = dist.argmin(axis=1)
        rows = np.arange(len(xy))
        s = self._cum[k] + t[rows, k] * self._seg_len[k]
        seg = self._seg[k]
        cross = seg[:, 0] * d[rows, k, 1] - seg[:, 1] * d[rows, k, 0]
        return s, np.sign(cross) * dist[rows, k]

    def points_at(self, s) -> np.ndarray:
        """Centerline positions at arc lengths ``s`` (clamped to the route), shape (n, 2)."""
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self.length)
        return np.column_stack([np.interp(s, self._cum, self._pts[:, 0]), np.interp(s, self._cum, self._pts[:, 1])])


ROUTES: dict[str, Route] = {
    "straight_200": Route("straight_200", ((0.0, 0.0), (200.0, 0.0))),
    "straight_80": Route("straight_80", ((0.0, 0.0), (80.0, 0.0))),
    "urban_l": Route("urban_l", ((0.0, 0.0), (60.0, 0.0), (60.0, 60.0))),
}


def get_route(route_id: str) -> Route:
    try:
        return ROUTES[route_id]
    except KeyError:
        raise KeyError(f"unknown route {route_id!r}") from None


@dataclass(frozen=True)
class VehicleSpec:
    wheelbase: float = 2.7
    length: float = 4.5
    width: float = 1.8
    max_accel: float = 3.0
    max_decel: float = 6.0
    max_steer: float = 0.6
    max_speed: float = 30.0


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    yaw: float
    speed: float = 0.0
    steering: float = 0.0


def footprint(ego: EgoState, vehicle: VehicleSpec) -> Polygon:
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    hl, hw = vehicle.length / 2.0, vehicle.width / 2.0
    corners = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
    return Polygon([(ego.x + c * a - s * b, ego.y + s * a + c * b) for a, b in corners])


def obstacle_polygon(o: Obstacle) -> Polygon:
    return box(o.x - o.length / 2, o.y - o.width / 2, o.x + o.length / 2, o.y + o.width / 2)


def validate_scenario(sc: ScenarioParams, vehicle: VehicleSpec = VehicleSpec()) -> list[str]:
    """Return the scenario's invariant violations (empty when valid)."""
    v = []
    if sc.route_id not in ROUTES:
        return [f"unknown route {sc.route_id!r}"]
    route = ROUTES[sc.route_id]
    if not sc.target_speed > 0 or sc.target_speed > vehicle.max_speed:
        v.append("target_speed out of (0, max_speed]")
    if not route.drivable_area().covers(Point(sc.goal)):
        v.append("goal is not on the drivable area")
    x, y, yaw = route.start_pose
    spawn = footprint(EgoState(x, y, yaw), vehicle)
    for i, o in enumerate(sc.static_obstacles):
        if min(o.width, o.length, o.height) <= 0:
            v.append(f"obstacle {i} has non-positive size")
        elif obstacle_polygon(o).intersects(spawn):
            v.append(f"obstacle {i} overlaps the ego spawn pose")
    return v


@dataclass(frozen=True)
class WorldState:
    route: Route
    obstacles: tuple[Obstacle, ...]
    ego: EgoState
    sim_time: int = 0  # ms
    frame_id: int = 0


def bicycle_step(ego: EgoState, control: ControlCommand, vehicle: VehicleSpec, dt: float = TICK_S) -> EgoState:
    """Advance a rear-axle kinematic bicycle by one explicit-Euler step.

    Position integrates the pre-step speed; speed is clamped at zero so the
    vehicle never reverses.
    """
    steer = min(max(control.steering, -vehicle.max_steer), vehicle.max_steer)
    accel = min(max(control.accel, -vehicle.max_decel), vehicle.max_accel)
    v = ego.speed
    x = ego.x + v * math.cos(ego.yaw) * dt
    y = ego.y + v * math.sin(ego.yaw) * dt
    yaw = ego.yaw + v / vehicle.wheelbase * math.tan(steer) * dt
    speed = min(max(v + accel * dt, 0.0), vehicle.max_speed)
    return EgoState(x, y, yaw, speed, steer)


@dataclass
class Simulator:
    """Deterministic stepped world emitting one LiDAR and one camera frame per tick."""

    lidar: LidarSpec = field(default_factory=LidarSpec)
    camera: CameraSpec = field(default_factory=CameraSpec)
    vehicle: VehicleSpec = VehicleSpec()
    state: WorldState | None = field(default=None, init=False)

    def reset(self, scenario: ScenarioParams):
        route = get_route(scenario.route_id)
        x, y, yaw = route.start_pose
        self.state = WorldState(route, scenario.static_obstacles, EgoState(x, y, yaw))
        return self.observe()

    def observe(self) -> tuple[WorldState, PointCloud, CameraFrame]:
        return self.state, lidar_scan(self.state, self.lidar), render_camera(self.state, self.camera)

    def step(self, control: ControlCommand):
        if self.state is None:
            raise RuntimeError("simulator not running; call reset() first")
        s = self.state
        self.state = replace(
            s,
            ego=bicycle_step(s.ego, control, self.vehicle),
            sim_time=s.sim_time + TICK_MS,
            frame_id=s.frame_id + 1,
        )
        return self.observe()

    def collided(self) -> bool:
        if not self.state.obstacles:
            return False
        fp = footprint(self.state.ego, self.vehicle)
        return any(fp.intersects(obstacle_polygon(o)) for o in self.state.obstacles)
