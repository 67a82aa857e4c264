"""Golden-run oracle: deviation metrics and finding predicates."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import (
    Finding,
    InfrastructureFailure,
    ScenarioParams,
    SensorFuzzParams,
    TrajectoryRecord,
    trajectory_is_time_sorted,
)


class ScenarioInvalid(Exception):
    """The unfuzzed run of a scenario did not reach its goal."""


@dataclass(frozen=True)
class GoldenRun:
    scenario_params: ScenarioParams
    trajectory: tuple[TrajectoryRecord, ...]
    goal_reached: bool = True

    def __post_init__(self):
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        if not self.trajectory:
            raise ValueError("golden trajectory is empty")
        if not trajectory_is_time_sorted(self.trajectory):
            raise ValueError("golden trajectory is not time-sorted")

    @property
    def duration(self) -> float:
        return (self.trajectory[-1].sim_time - self.trajectory[0].sim_time) / 1000.0


@dataclass(frozen=True)
class OracleThresholds:
    eps_lateral: float = 0.5
    speed_ratio_min: float = 0.8
    sustain_window: float = 1.0
    immobility_speed: float = 0.1
    immobility_duration: float = 3.0
    completion_timeout: float = 3.0
    # golden speeds below this are too small to form a meaningful ratio
    reference_speed_floor: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"threshold {k} must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DeviationMetrics:
    max_lateral_deviation: float
    min_speed_ratio: float
    longest_immobile_span: float
    goal_reached: bool
    completion_time_ratio: float | None

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RunContext:
    iteration_id: str = ""
    sensor_params: tuple[SensorFuzzParams, ...] = ()
    scenario_params: ScenarioParams | None = None
    collision: bool = False
    timeout: bool = False


def _arrays(traj):
    t = np.array([r.sim_time for r in traj], dtype=float) / 1000.0
    xy = np.array([(r.x, r.y) for r in traj], dtype=float)
    v = np.array([r.speed for r in traj], dtype=float)
    return t, xy, v


def project_onto_path(path_xy: np.ndarray, xy: np.ndarray, chunk: int = 512):
    """Project points onto a polyline.

    Returns the arc length of each foot point along the polyline and the
    unsigned distance to it. Repeated path points are dropped first.
    """
    path_xy = np.asarray(path_xy, dtype=float)
    keep = np.concatenate([[True], np.any(np.diff(path_xy, axis=0) != 0, axis=1)])
    path_xy = path_xy[keep]
    if len(path_xy) == 1:
        d = np.hypot(*(xy - path_xy[0]).T)
        return np.zeros(len(xy)), d
    a = path_xy[:-1]
    seg = np.diff(path_xy, axis=0)
    seg_len2 = (seg**2).sum(1)
    seg_len = np.sqrt(seg_len2)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    # the end segments extend past the path ends so overshoot is not lateral
    t_lo = np.zeros(len(seg))
    t_hi = np.ones(len(seg))
    t_lo[0], t_hi[-1] = -np.inf, np.inf
    s_out = np.empty(len(xy))
    d_out = np.empty(len(xy))
    for lo in range(0, len(xy), chunk):
        p = xy[lo : lo + chunk]
        rel = p[:, None, :] - a[None]
        t = np.clip((rel * seg[None]).sum(-1) / seg_len2, t_lo, t_hi)
        diff = rel - t[..., None] * seg[None]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        k = dist.argmin(1)
        rows = np.arange(len(p))
        s_out[lo : lo + chunk] = cum[k] + t[rows, k] * seg_len[k]
        d_out[lo : lo + chunk] = dist[rows, k]
    return s_out, d_out


def _golden_speed_at(golden_s: np.ndarray, golden_v: np.ndarray, s: np.ndarray) -> np.ndarray:
    # first record at each new arc length; golden_s is non-decreasing
    s_mono = np.maximum.accumulate(golden_s)
    uniq, first = np.unique(s_mono, return_index=True)
    if len(uniq) == 1:
        return np.full(len(s), golden_v[first[0]])
    return np.interp(s, uniq, golden_v[first])


def windowed_min_of_max(t: np.ndarray, values: np.ndarray, window: float) -> float:
    """Smallest value of ``max(values)`` over any time window of length ``window``.

    A window starting at sample i covers samples with t in [t_i, t_i + window];
    only windows fully inside the trace count. Returns 1.0 if none fits.
    """
    best = math.inf
    dq: deque[int] = deque()
    j = 0
    n = len(t)
    eps = 1e-9
    for i in range(n):
        if t[i] + window > t[-1] + eps:
            break
        while j < n and t[j] <= t[i] + window + eps:
            while dq and values[dq[-1]] <= values[j]:
                dq.pop()
            dq.append(j)
            j += 1
        while dq[0] < i:
            dq.popleft()
        best = min(best, values[dq[0]])
    return float(best) if best is not math.inf else 1.0


def longest_span(t: np.ndarray, flag: np.ndarray) -> float:
    """Longest duration (last - first timestamp) of a run of consecutive True flags."""
    best = 0.0
    start = None
    for i, f in enumerate(flag):
        if f:
            if start is None:
                start = i
            best = max(best, t[i] - t[start])
        else:
            start = None
    return float(best)


def compute_metrics(
    golden: GoldenRun,
    observed: Sequence[TrajectoryRecord],
    thresholds: OracleThresholds = OracleThresholds(),
    goal_reached: bool | None = None,
) -> DeviationMetrics:
    """Compare an observed run against the golden run.

    Observed poses are matched to the golden path by arc-length projection,
    not by timestamp, so a slower run is not mistaken for a lateral one.

    Raises:
        InfrastructureFailure: ``observed`` is empty.
    """
    if not observed:
        raise InfrastructureFailure("observed trajectory is empty")
    if not trajectory_is_time_sorted(observed):
        raise ValueError("observed trajectory is not time-sorted")
    gt, gxy, gv = _arrays(golden.trajectory)
    ot, oxy, ov = _arrays(observed)
    g_s, _ = project_onto_path(gxy, gxy)
    o_s, lateral = project_onto_path(gxy, oxy)

    ref = _golden_speed_at(g_s, gv, o_s)
    ratio = np.where(ref >= thresholds.reference_speed_floor, ov / np.maximum(ref, 1e-12), 1.0)
    min_ratio = windowed_min_of_max(ot, ratio, thresholds.sustain_window)

    if goal_reached is None:
        goal_reached = o_s[-1] >= g_s[-1] - 1e-6
    duration = ot[-1] - ot[0]
    completion = duration / golden.duration if goal_reached and golden.duration > 0 else None
    return DeviationMetrics(
        max_lateral_deviation=float(lateral.max()),
        min_speed_ratio=min(1.0, min_ratio) if np.isfinite(min_ratio) else 1.0,
        longest_immobile_span=longest_span(ot, ov < thresholds.immobility_speed),
        goal_reached=bool(goal_reached),
        completion_time_ratio=None if completion is None else float(completion),
    )


def evaluate(metrics: DeviationMetrics, t: OracleThresholds, context: RunContext = RunContext()) -> list[Finding]:
    """Turn metrics and run events into findings; an empty list means none."""
    kinds = []
    if metrics.max_lateral_deviation > t.eps_lateral:
        kinds.append(("trajectory_deviation", {"max_lateral_deviation": metrics.max_lateral_deviation}))
    if metrics.min_speed_ratio < t.speed_ratio_min:
        kinds.append(("deceleration", {"min_speed_ratio": metrics.min_speed_ratio, "sustain_window": t.sustain_window}))
    if metrics.longest_immobile_span >= t.immobility_duration and not metrics.goal_reached:
        kinds.append(("immobility", {"immobile_duration": metrics.longest_immobile_span, "goal_reached": False}))
    if context.collision:
        kinds.append(("collision", {"collision": True}))
    if context.timeout:
        kinds.append(("timeout", {"timeout": True, "goal_reached": metrics.goal_reached}))
    return [
        Finding(kind, context.iteration_id, tuple(context.sensor_params), context.scenario_params, evidence)
        for kind, evidence in kinds
    ]


@dataclass(frozen=True)
class RunResult:
    """Raw outcome of one simulated drive."""

    trajectory: tuple[TrajectoryRecord, ...]
    goal_reached: bool
    collision: bool = False
    timeout: bool = False
    frame_counts: tuple[tuple[str, int], ...] = ()


def create_golden_run(scenario: ScenarioParams, execute) -> GoldenRun:
    """Run ``scenario`` unfuzzed through ``execute`` and keep it as ground truth.

    ``execute(scenario)`` must perform a drive with fuzzing disabled and
    return a :class:`RunResult`.

    Raises:
        ScenarioInvalid: the unfuzzed drive collided or missed the goal.
    """
    result = execute(scenario)
    if not result.trajectory:
        raise InfrastructureFailure("golden run produced no trajectory")
    if result.collision:
        raise ScenarioInvalid("unfuzzed run collided")
    if not result.goal_reached:
        raise ScenarioInvalid("unfuzzed run did not reach the goal")
    return GoldenRun(scenario, result.trajectory, True)
