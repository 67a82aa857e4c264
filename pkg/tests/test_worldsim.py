import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fuzzsense.core import ControlCommand, Obstacle, PointCloud, ScenarioParams
from fuzzsense.worldsim import (
    CameraSpec,
    Corridor,
    LidarSpec,
    PlannerConfig,
    ReferenceADS,
    Simulator,
    commanded_speed,
    get_route,
    lidar_scan,
    perceive,
    render_camera,
    validate_scenario,
)
from fuzzsense.worldsim.lidar import _ray_boxes
from fuzzsense.worldsim.world import TICK_MS, TICK_S, EgoState, VehicleSpec, WorldState, bicycle_step

from conftest import straight


def test_constant_accel_closed_form():
    # ten explicit-Euler ticks at 1 m/s^2 from rest
    ego = EgoState(0.0, 0.0, 0.0)
    for _ in range(10):
        ego = bicycle_step(ego, ControlCommand(0.0, 1.0), VehicleSpec())
    assert ego.speed == pytest.approx(0.33)
    # position integrates the pre-step speed: sum_{k<10} k*dt*dt
    assert ego.x == pytest.approx(45 * TICK_S * TICK_S)
    assert ego.y == 0.0


def test_accel_and_steer_are_clamped():
    spec = VehicleSpec()
    ego = bicycle_step(EgoState(0, 0, 0, 10.0), ControlCommand(5.0, -100.0), spec)
    assert ego.speed == pytest.approx(10.0 - spec.max_decel * TICK_S)
    assert ego.steering == spec.max_steer
    assert bicycle_step(EgoState(0, 0, 0, 0.1), ControlCommand(0, -6), spec).speed == 0.0


@given(st.floats(0.5, 20), st.floats(-0.5, 0.5))
def test_yaw_rate_matches_bicycle_model(v, steer):
    ego = bicycle_step(EgoState(0, 0, 0.3, v), ControlCommand(steer, 0.0), VehicleSpec())
    assert ego.yaw - 0.3 == pytest.approx(v / 2.7 * math.tan(steer) * TICK_S)


def test_route_projection():
    r = get_route("urban_l")
    s, lat = r.project([(30.0, 1.0), (61.0, 20.0)])
    np.testing.assert_allclose(s, [30.0, 80.0])
    np.testing.assert_allclose(lat, [1.0, -1.0])
    np.testing.assert_allclose(r.points_at([0.0, 90.0, 500.0]), [[0, 0], [60, 30], [60, 60]])
    assert r.length == 120.0


def test_unknown_route():
    with pytest.raises(KeyError):
        get_route("mars")


def test_scenario_validation():
    assert validate_scenario(straight()) == []
    assert any("goal" in v for v in validate_scenario(ScenarioParams("straight_80", (40, 10), 5.0)))
    assert any("spawn" in v for v in validate_scenario(straight(obstacles=(Obstacle(0, 0, 1, 1),))))
    assert any("target_speed" in v for v in validate_scenario(straight(speed=0.0)))
    assert validate_scenario(ScenarioParams("nope", (0, 0), 1.0)) == ["unknown route 'nope'"]


def _world(obstacles=(), ego=EgoState(0.0, 0.0, 0.0)):
    return WorldState(get_route("straight_200"), tuple(obstacles), ego)


def test_lidar_frame_shape_and_ground_ranges():
    spec = LidarSpec()
    cloud = lidar_scan(_world(), spec)
    assert spec.ring_count * spec.azimuth_count == 16 * 720
    assert cloud.is_well_formed(16)
    # downward rings hit the ground at h / sin|elev| when within range
    rng = np.linalg.norm(cloud.xyz - spec.mount.origin, axis=1)
    for k, e in enumerate(spec.ring_elevations_deg):
        sel = cloud.ring == k
        expected = 1.8 / math.sin(math.radians(-e)) if e < 0 else math.inf
        if expected <= spec.max_range:
            assert sel.sum() == 720
            np.testing.assert_allclose(rng[sel], expected, rtol=1e-9)
        else:
            assert sel.sum() == 0
    np.testing.assert_allclose(cloud.xyz[:, 2], 0.0, atol=1e-9)


def test_ray_box_slab_matches_analytic():
    origin = np.array([0.0, 0.0, 1.0])
    lo, hi = np.array([[10.0, -1.0, 0.0]]), np.array([[12.0, 1.0, 2.0]])
    dirs = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [math.cos(0.05), math.sin(0.05), 0.0], [0.0, 1.0, 0.0]])
    t = _ray_boxes(origin, dirs, lo, hi)
    assert t[0] == pytest.approx(10.0)
    assert t[1] == math.inf
    assert t[2] == pytest.approx(10.0 / math.cos(0.05))
    assert t[3] == math.inf


def test_obstacle_returns_in_front():
    cloud = lidar_scan(_world([Obstacle(20.0, 0.0, 2.0, 1.0, 1.5)]), LidarSpec())
    hits = cloud.xyz[cloud.xyz[:, 2] > 0.2]
    assert len(hits) > 0
    np.testing.assert_allclose(hits[:, 0], 19.5, atol=1e-9)
    assert (np.abs(hits[:, 1]) <= 1.0 + 1e-9).all()


def test_camera_render_is_deterministic_and_sized():
    spec = CameraSpec()
    a = render_camera(_world([Obstacle(15.0, 0.0, 2.0, 1.0)]), spec)
    b = render_camera(_world([Obstacle(15.0, 0.0, 2.0, 1.0)]), spec)
    assert a.pixels.shape == (spec.height, spec.width)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert (render_camera(_world(), spec).pixels != a.pixels).any()


def _corridor():
    return Corridor(get_route("straight_200"), EgoState(0, 0, 0), 3.5)


def _wall(x, y0, n=20):
    ys = y0 + np.arange(n) * 0.1
    xyz = np.column_stack([np.full(n, x), ys, np.full(n, 1.0)])
    return PointCloud(0, 0, xyz, np.zeros(n), np.zeros(n))


def test_perception_sees_in_corridor_cluster():
    found = perceive(_wall(25.0, -0.5), _corridor())
    assert len(found) == 1
    assert found[0].distance == pytest.approx(25.0)


def test_perception_ignores_off_corridor_ground_and_noise():
    assert perceive(_wall(25.0, 3.0), _corridor()) == []
    ground = PointCloud(0, 0, [[10, 0, 0.05]] * 5, np.zeros(5), np.zeros(5))
    assert perceive(ground, _corridor()) == []
    lone = PointCloud(0, 0, [[10, 0, 1.0], [20, 0, 1.0]], np.zeros(2), np.zeros(2))
    assert perceive(lone, _corridor()) == []


def test_commanded_speed_profile():
    cfg = PlannerConfig()
    assert commanded_speed(None, 8.0, cfg) == 8.0
    assert commanded_speed(50.0, 8.0, cfg) == 8.0
    assert commanded_speed(8.0, 8.0, cfg) == 0.0
    assert commanded_speed(24.0, 8.0, cfg) == pytest.approx(4.0)


def _drive(scenario, ticks=None):
    sim, ads = Simulator(), ReferenceADS()
    state, cloud, _ = sim.reset(scenario)
    ads.reset(scenario)
    traj = [state]
    while math.hypot(state.ego.x - scenario.goal[0], state.ego.y - scenario.goal[1]) > 2.0:
        state, cloud, _ = sim.step(ads.step(cloud, state.ego))
        traj.append(state)
        if ticks is not None and len(traj) > ticks or len(traj) > 10_000:
            break
    return traj


@pytest.mark.slow
def test_golden_duration_matches_closed_form():
    # 8/3 s at max accel covering 32/3 m, then cruise to 2 m short of the goal
    traj = _drive(straight("straight_200", 8.0))
    expected = 8.0 / 3.0 + (198.0 - 32.0 / 3.0) / 8.0
    assert traj[-1].sim_time / 1000.0 == pytest.approx(expected, abs=2 * TICK_S)
    assert max(abs(s.ego.y) for s in traj) < 1e-9


def test_urban_route_is_followed():
    traj = _drive(straight("urban_l", 6.0))
    route = get_route("urban_l")
    _, lat = route.project([(s.ego.x, s.ego.y) for s in traj])
    assert np.abs(lat).max() < 1.0
    assert math.hypot(traj[-1].ego.x - 60, traj[-1].ego.y - 60) <= 2.0


def test_simulator_is_deterministic_and_ticks_33ms():
    a = _drive(straight("straight_80", 5.0), ticks=30)
    b = _drive(straight("straight_80", 5.0), ticks=30)
    assert [(s.ego, s.sim_time) for s in a] == [(s.ego, s.sim_time) for s in b]
    assert [s.sim_time for s in a[:3]] == [0, TICK_MS, 2 * TICK_MS]


def test_collision_detection():
    sim = Simulator()
    sim.reset(straight(obstacles=(Obstacle(10.0, 0.0, 2.0, 1.0),)))
    assert not sim.collided()
    sim.state = WorldState(sim.state.route, sim.state.obstacles, EgoState(9.0, 0.0, 0.0))
    assert sim.collided()


def test_step_before_reset_raises():
    with pytest.raises(RuntimeError):
        Simulator().step(ControlCommand())
