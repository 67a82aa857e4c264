"""Three sensor fuzzing iterations against one golden run.

Moving the mask off the lane changes nothing; in the lane at 30 m the car
slows, and at 8 m it stops and never reaches the goal.

    python3 demos/03_findings_triple.py
"""

import dataclasses
import json
from pathlib import Path

from fuzzsense.orchestrator import CampaignConfig, Orchestrator

config = CampaignConfig.from_dict(json.loads((Path(__file__).parent / "reference_scenario.json").read_text()))
orch = Orchestrator(config)
scenario = config.scenario_seeds[0]
golden = orch.create_golden_run(scenario)
print(f"golden run: {len(golden.trajectory)} ticks, {golden.duration:.2f} s to the goal")

seed = config.sensors[0].seed
cases = [
    ("off the lane, 30 m", dataclasses.replace(seed, center_x=1.0)),
    ("in the lane, 30 m", seed),
    ("in the lane, 8 m", dataclasses.replace(seed, distance=8.0)),
]
for k, (label, p) in enumerate(cases):
    record, findings = orch.run_sensor_iteration((p,), golden, 0, k)
    m = record.metrics
    print(f"\n{label}")
    print(f"  speed ratio (sustained min) {m['min_speed_ratio']:.3f}")
    print(f"  longest immobile span       {m['longest_immobile_span']:.1f} s")
    print(f"  goal reached                {m['goal_reached']}")
    print(f"  findings                    {[f.kind for f in findings] or 'none'}")
