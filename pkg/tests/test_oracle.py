import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzzsense.core import InfrastructureFailure, TrajectoryRecord
from fuzzsense.oracle import (
    GoldenRun,
    OracleThresholds,
    RunContext,
    RunResult,
    ScenarioInvalid,
    compute_metrics,
    create_golden_run,
    evaluate,
    longest_span,
    project_onto_path,
    windowed_min_of_max,
)

from conftest import straight

DT = 33


def _traj(xs, ys=None, speeds=None):
    n = len(xs)
    ys = np.zeros(n) if ys is None else ys
    speeds = np.full(n, 8.0) if speeds is None else speeds
    return tuple(TrajectoryRecord(DT * k, float(xs[k]), float(ys[k]), 0.0, float(speeds[k])) for k in range(n))


def _cruise(length=100.0, v=8.0):
    n = int(length / (v * DT / 1000.0)) + 1
    xs = np.arange(n) * v * DT / 1000.0
    return GoldenRun(straight(), _traj(xs, speeds=np.full(n, v)))


def brute_min_of_max(t, v, w):
    best = math.inf
    for i in range(len(t)):
        if t[i] + w > t[-1] + 1e-9:
            break
        best = min(best, max(v[j] for j in range(len(t)) if t[i] <= t[j] <= t[i] + w + 1e-9))
    return 1.0 if best == math.inf else best


@given(st.lists(st.floats(0, 2), min_size=1, max_size=80), st.floats(0.01, 1.5))
def test_windowed_min_of_max_matches_brute_force(values, w):
    t = np.arange(len(values)) * 0.033
    assert windowed_min_of_max(t, np.array(values), w) == brute_min_of_max(t, values, w)


def brute_longest_span(t, flag):
    best = 0.0
    for i in range(len(t)):
        for j in range(i, len(t)):
            if all(flag[i : j + 1]):
                best = max(best, t[j] - t[i])
    return best


@given(st.lists(st.booleans(), max_size=40))
def test_longest_span_matches_brute_force(flags):
    t = np.arange(len(flags)) * 0.033
    assert longest_span(t, np.array(flags, dtype=bool)) == pytest.approx(brute_longest_span(t, flags))


def test_projection_onto_polyline():
    path = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    s, d = project_onto_path(path, np.array([[5.0, 1.0], [11.0, 5.0], [-3.0, 0.0], [10.0, 14.0]]))
    np.testing.assert_allclose(s, [5.0, 15.0, -3.0, 24.0])
    np.testing.assert_allclose(d, [1.0, 1.0, 0.0, 0.0])


def test_projection_tolerates_repeated_points():
    path = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [5.0, 0.0]])
    s, d = project_onto_path(path, np.array([[2.0, 0.5]]))
    assert (s[0], d[0]) == (2.0, 0.5)


def test_thresholds_must_be_positive():
    with pytest.raises(ValueError):
        OracleThresholds(eps_lateral=0.0)


def test_self_comparison_has_no_findings():
    g = _cruise()
    m = compute_metrics(g, g.trajectory)
    assert m.max_lateral_deviation == 0.0
    assert m.min_speed_ratio == 1.0
    assert m.goal_reached and m.completion_time_ratio == 1.0
    assert evaluate(m, OracleThresholds()) == []


@settings(max_examples=40, deadline=None)
@given(st.floats(2, 15), st.floats(20, 150), st.floats(-0.5, 0.5), st.integers(0, 1000))
def test_self_comparison_property(v, length, curvature, seed):
    n = max(3, int(length / (v * 0.033)))
    s = np.linspace(0, length, n)
    rng = np.random.default_rng(seed)
    xs = s
    ys = curvature * (s / length) ** 2 * 10
    g = GoldenRun(straight(), _traj(xs, ys, np.clip(v + rng.normal(0, 0.1, n), 0, None)))
    assert evaluate(compute_metrics(g, g.trajectory), OracleThresholds()) == []


def test_lateral_offset_is_a_trajectory_deviation():
    g = _cruise()
    xs = np.array([r.x for r in g.trajectory])
    observed = _traj(xs, ys=np.where(xs > 50, 0.8, 0.0))
    m = compute_metrics(g, observed)
    assert m.max_lateral_deviation == pytest.approx(0.8)
    assert [f.kind for f in evaluate(m, OracleThresholds())] == ["trajectory_deviation"]


def test_slower_run_on_same_path_is_not_lateral():
    g = _cruise()
    n = 2 * len(g.trajectory)
    xs = np.arange(n) * 4.0 * DT / 1000.0
    m = compute_metrics(g, _traj(xs, speeds=np.full(n, 4.0)))
    assert m.max_lateral_deviation < 1e-12
    assert m.min_speed_ratio == pytest.approx(0.5)
    kinds = [f.kind for f in evaluate(m, OracleThresholds())]
    assert kinds == ["deceleration"]


def test_short_dip_is_not_sustained():
    g = _cruise()
    speeds = np.full(len(g.trajectory), 8.0)
    speeds[100:110] = 2.0  # 0.33 s, below the 1 s window
    xs = np.array([r.x for r in g.trajectory])
    m = compute_metrics(g, _traj(xs, speeds=speeds))
    assert m.min_speed_ratio == 1.0
    speeds[100:140] = 2.0  # 1.3 s
    m = compute_metrics(g, _traj(xs, speeds=speeds))
    assert m.min_speed_ratio == pytest.approx(0.25)


def test_immobility_only_counts_without_goal():
    g = _cruise()
    n = 200
    stuck = _traj(np.full(n, 20.0), speeds=np.zeros(n))
    m = compute_metrics(g, stuck, goal_reached=False)
    assert m.longest_immobile_span == pytest.approx((n - 1) * 0.033)
    kinds = [f.kind for f in evaluate(m, OracleThresholds(), RunContext(timeout=True))]
    assert kinds == ["deceleration", "immobility", "timeout"]
    m2 = compute_metrics(g, stuck, goal_reached=True)
    assert "immobility" not in [f.kind for f in evaluate(m2, OracleThresholds())]


def test_speed_ratio_ignores_low_reference_speed():
    # golden accelerating from rest: observed crawling at the start is not a ratio collapse
    n = 100
    gv = np.minimum(np.arange(n) * 0.1, 8.0)
    gx = np.concatenate([[0], np.cumsum(gv[:-1] * 0.033)])
    g = GoldenRun(straight(), _traj(gx, speeds=gv))
    m = compute_metrics(g, g.trajectory)
    assert m.min_speed_ratio == 1.0


def test_collision_and_timeout_from_context():
    g = _cruise()
    m = compute_metrics(g, g.trajectory)
    ctx = RunContext("0-0-0", (), g.scenario_params, collision=True, timeout=False)
    found = evaluate(m, OracleThresholds(), ctx)
    assert [f.kind for f in found] == ["collision"]
    assert found[0].iteration_id == "0-0-0"


def test_empty_observation_is_infrastructure_failure():
    with pytest.raises(InfrastructureFailure):
        compute_metrics(_cruise(), ())


def test_unsorted_golden_rejected():
    t = _traj([0.0, 1.0])
    with pytest.raises(ValueError):
        GoldenRun(straight(), (t[1], t[0]))


def test_create_golden_run():
    traj = _traj([0.0, 1.0, 2.0])
    g = create_golden_run(straight(), lambda sc: RunResult(traj, True))
    assert g.trajectory == traj and g.duration == pytest.approx(0.066)
    with pytest.raises(ScenarioInvalid):
        create_golden_run(straight(), lambda sc: RunResult(traj, False))
    with pytest.raises(ScenarioInvalid):
        create_golden_run(straight(), lambda sc: RunResult(traj, True, collision=True))
    with pytest.raises(InfrastructureFailure):
        create_golden_run(straight(), lambda sc: RunResult((), False))
