"""Injecting a mask into a LiDAR frame and what the driving stack makes of it.

Each mask cell becomes one point on a vertical plane ``distance`` metres
ahead of the sensor, 0.1 m per cell. Whether the planner reacts depends on
where that plane lands relative to the lane corridor.

    python3 demos/02_lidar_injection.py
"""

from fuzzsense.core import ScenarioParams, SensorFuzzParams
from fuzzsense.maskgen import LidarFuzzer, generate_mask
from fuzzsense.worldsim import Corridor, LidarSpec, Simulator, commanded_speed, perceive

lidar = LidarSpec()
sim = Simulator(lidar)
scenario = ScenarioParams("straight_200", (200.0, 0.0), 8.0)
state, cloud, _ = sim.reset(scenario)
print(f"clean frame: {len(cloud)} returns from {lidar.ring_count} rings x {lidar.azimuth_count} azimuths")

fuzzer = LidarFuzzer("lidar_top", sensor_pose=lidar.mount, ring_elevations_deg=lidar.ring_elevations_deg)
corridor = Corridor(state.route, state.ego, state.route.lane_width)

for x, d in [(0.4, 30.0), (0.4, 8.0), (1.0, 30.0)]:
    p = SensorFuzzParams(0.01, 0.1, x, 0.5, 100, 60, 0.1, d)
    mask = generate_mask(p, rng_seed=7)
    fuzzed = fuzzer.apply(cloud, mask, p)
    seen = perceive(fuzzed, corridor)
    nearest = seen[0].distance if seen else None
    v = commanded_speed(nearest, scenario.target_speed)
    where = "none" if nearest is None else f"{nearest:.1f} m ahead"
    print(f"X={x} d={d:>4}: +{len(fuzzed) - len(cloud)} points, obstacle {where}, planner asks {v:.2f} m/s")
