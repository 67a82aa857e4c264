"""Deterministic toy world and reference driving stack used as the system under test."""

from .ads import (
    Corridor,
    DetectedObstacle,
    PerceptionConfig,
    PlannerConfig,
    ReferenceADS,
    commanded_speed,
    perceive,
    plan,
)
from .camera import CameraSpec, render_camera
from .lidar import LidarSpec, lidar_scan
from .world import (
    ROUTES,
    TICK_MS,
    TICK_S,
    EgoState,
    Route,
    Simulator,
    VehicleSpec,
    WorldState,
    bicycle_step,
    get_route,
    validate_scenario,
)
