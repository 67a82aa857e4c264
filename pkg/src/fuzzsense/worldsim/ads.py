"""Reference driving stack: corridor perception and a speed-profile planner.

The stack consumes LiDAR only. It never re-plans laterally, so an
obstacle spanning the corridor can only be answered by slowing or
stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..core import ControlCommand, PointCloud, ScenarioParams
from .world import TICK_S, EgoState, Route, VehicleSpec, get_route


@dataclass(frozen=True)
class DetectedObstacle:
    distance: float  # along the path from the ego reference point, m
    lateral: float  # signed offset from centerline (left positive), m
    extent: float  # lateral span of the cluster, m
    points: int


@dataclass(frozen=True)
class Corridor:
    route: Route
    ego: EgoState
    width: float
    horizon: float = 100.0


@dataclass(frozen=True)
class PerceptionConfig:
    ground_z: float = 0.2
    cluster_tolerance: float = 0.5
    min_cluster_points: int = 3


def perceive(cloud: PointCloud, corridor: Corridor, cfg: PerceptionConfig = PerceptionConfig()) -> list[DetectedObstacle]:
    """Detect obstacles inside the driving corridor, nearest first.

    Ground points (z below ``ground_z``) are dropped, the rest are mapped
    to route coordinates and kept if they lie within half the corridor
    width of the centerline and ahead of the ego within the horizon. Kept
    points are clustered by single-linkage at ``cluster_tolerance``;
    clusters smaller than ``min_cluster_points`` are treated as noise.
    """
    xyz = cloud.xyz
    above = xyz[:, 2] >= cfg.ground_z
    if not above.any():
        return []
    pts = xyz[above]
    ego = corridor.ego
    c, s = math.cos(ego.yaw), math.sin(ego.yaw)
    world_xy = np.column_stack([ego.x + c * pts[:, 0] - s * pts[:, 1], ego.y + s * pts[:, 0] + c * pts[:, 1]])
    s_pts, lat = corridor.route.project(world_xy)
    s_ego = corridor.route.project([(ego.x, ego.y)])[0][0]
    ahead = s_pts - s_ego
    keep = (np.abs(lat) <= corridor.width / 2.0) & (ahead > 0.0) & (ahead <= corridor.horizon)
    if keep.sum() < cfg.min_cluster_points:
        return []
    pts, ahead, lat = pts[keep], ahead[keep], lat[keep]

    pairs = cKDTree(pts).query_pairs(cfg.cluster_tolerance, output_type="ndarray")
    n = len(pts)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    found = []
    for k in range(count):
        idx = np.flatnonzero(labels == k)
        if len(idx) < cfg.min_cluster_points:
            continue
        near = idx[ahead[idx].argmin()]
        found.append(
            DetectedObstacle(float(ahead[near]), float(lat[near]), float(np.ptp(lat[idx])), len(idx))
        )
    return sorted(found, key=lambda o: o.distance)


@dataclass(frozen=True)
class PlannerConfig:
    d_slow: float = 40.0
    d_stop: float = 8.0
    lookahead_min: float = 4.0
    lookahead_gain: float = 0.8


def commanded_speed(obstacle_distance: float | None, target_speed: float, cfg: PlannerConfig = PlannerConfig()) -> float:
    """Speed the planner asks for given the nearest in-corridor obstacle."""
    if obstacle_distance is None or obstacle_distance > cfg.d_slow:
        return target_speed
    if obstacle_distance <= cfg.d_stop:
        return 0.0
    return target_speed * (obstacle_distance - cfg.d_stop) / (cfg.d_slow - cfg.d_stop)


def pure_pursuit(route: Route, ego: EgoState, cfg: PlannerConfig, vehicle: VehicleSpec) -> float:
    s_ego = route.project([(ego.x, ego.y)])[0][0]
    lookahead = max(cfg.lookahead_min, cfg.lookahead_gain * ego.speed)
    tx, ty = route.points_at(s_ego + lookahead)[0]
    dx, dy = tx - ego.x, ty - ego.y
    alpha = math.atan2(dy, dx) - ego.yaw
    dist = max(math.hypot(dx, dy), 1e-6)
    return math.atan2(2.0 * vehicle.wheelbase * math.sin(alpha), dist)


def plan(
    obstacles: list[DetectedObstacle],
    route: Route,
    ego: EgoState,
    target_speed: float,
    cfg: PlannerConfig = PlannerConfig(),
    vehicle: VehicleSpec = VehicleSpec(),
    dt: float = TICK_S,
) -> ControlCommand:
    nearest = obstacles[0].distance if obstacles else None
    v_cmd = commanded_speed(nearest, target_speed, cfg)
    accel = min(max((v_cmd - ego.speed) / dt, -vehicle.max_decel), vehicle.max_accel)
    return ControlCommand(pure_pursuit(route, ego, cfg, vehicle), accel)


@dataclass
class ReferenceADS:
    """Perception + planning loop driven one LiDAR frame at a time."""

    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    route: Route | None = None
    target_speed: float = 0.0
    last_obstacles: list = field(default_factory=list)

    def reset(self, scenario: ScenarioParams) -> None:
        self.route = get_route(scenario.route_id)
        self.target_speed = scenario.target_speed
        self.last_obstacles = []

    def step(self, cloud: PointCloud, ego: EgoState) -> ControlCommand:
        corridor = Corridor(self.route, ego, self.route.lane_width)
        self.last_obstacles = perceive(cloud, corridor, self.perception)
        return plan(self.last_obstacles, self.route, ego, self.target_speed, self.planner, self.vehicle)
