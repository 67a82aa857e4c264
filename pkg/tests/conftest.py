import json
from pathlib import Path

import pytest

from fuzzsense.core import LIDAR, ScenarioParams, SensorFuzzParams, SensorMeta
from fuzzsense.orchestrator import CampaignConfig, Orchestrator
from fuzzsense.repository import CampaignStore

DEMOS = Path(__file__).resolve().parents[1] / "demos"

# Mask parameters from the reference LiDAR experiment.
REFERENCE = dict(
    change_ratio=0.1,
    dispersion=0.1,
    center_x=0.4,
    center_y=0.5,
    mask_width=100,
    mask_height=60,
    intensity=0.1,
    distance=30.0,
)


def make_params(**overrides):
    return SensorFuzzParams(**{**REFERENCE, **overrides})


def lidar_meta(perception_range=100.0):
    return SensorMeta("lidar_top", LIDAR, perception_range)


def straight(route="straight_200", speed=8.0, obstacles=()):
    goal = {"straight_200": (200.0, 0.0), "straight_80": (80.0, 0.0), "urban_l": (60.0, 60.0)}[route]
    return ScenarioParams(route, goal, speed, obstacles)


def reference_config_dict():
    return json.loads((DEMOS / "reference_scenario.json").read_text())


@pytest.fixture(scope="session")
def reference_campaign(tmp_path_factory):
    """The four-iteration reference campaign, run once and persisted."""
    root = tmp_path_factory.mktemp("reference") / "campaign"
    orch = Orchestrator(CampaignConfig.from_dict(reference_config_dict()), CampaignStore(root))
    report = orch.run_campaign()
    return root, report, orch


_criteria: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if call.when == "call" or call.excinfo is not None:
        ok = call.excinfo is None
        prev = _criteria.get(n, (title, True))[1]
        _criteria[n] = (title, prev and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
