"""Campaign state machine.

A campaign runs scenario fuzzing iterations until a stop condition holds.
Each scenario iteration mutates the scenario, sets it up, records the
golden run with fuzzing disabled and then runs one sensor fuzzing
iteration per sensor-parameter vector the mutator emits. The orchestrator
is the only component that talks to the others; the mutator, mask
generator, broker and oracle never call each other.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import maskgen, mutator, oracle
from .broker import Broker, SocketBridge, SocketClient
from .core import (
    CAMERA,
    LIDAR,
    ControlCommand,
    Finding,
    InfrastructureFailure,
    IterationRecord,
    ParameterError,
    ScenarioParams,
    SensorFuzzParams,
    SensorMeta,
    TrajectoryRecord,
    iteration_id,
    validate_params,
)
from .oracle import GoldenRun, OracleThresholds, RunContext, RunResult, ScenarioInvalid
from .repository import CampaignStore
from .wire import BrokerMessage
from .worldsim import (
    CameraSpec,
    LidarSpec,
    PlannerConfig,
    ReferenceADS,
    Simulator,
    get_route,
    validate_scenario,
)

log = logging.getLogger(__name__)

GOAL_TOLERANCE = 2.0  # m
STOP_EXHAUSTED = "exhausted"
STOP_MAX_ITERATIONS = "max_iterations"
STOP_WALL_BUDGET = "wall_budget"
STOP_FIRST_FINDING = "first_finding"
STOP_ABORTED = "infrastructure_failure"


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any sequence of printable parts."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class SensorSetup:
    meta: SensorMeta
    seed: SensorFuzzParams
    grid: mutator.GridSpec = mutator.GridSpec()


@dataclass(frozen=True)
class CampaignConfig:
    scenario_seeds: tuple[ScenarioParams, ...]
    sensors: tuple[SensorSetup, ...]
    scenario_grid: mutator.GridSpec = mutator.GridSpec()
    max_iterations: int | None = None
    wall_budget: float | None = None
    stop_on_first_finding: bool = False
    thresholds: OracleThresholds = OracleThresholds()
    master_seed: int = 0
    campaign_index: int = 0
    cell_size: float = 0.1
    planner: PlannerConfig = PlannerConfig()

    def violations(self) -> list[str]:
        v = []
        if not self.scenario_seeds:
            v.append("at least one scenario seed is required")
        if not self.sensors:
            v.append("at least one sensor seed is required")
        for sc in self.scenario_seeds:
            v += [f"scenario seed: {m}" for m in validate_scenario(sc)]
        for s in self.sensors:
            v += [f"{s.meta.stream_id} seed: {m}" for m in validate_params(s.seed, s.meta).violations]
            for name, values in s.grid.axes:
                if not hasattr(s.seed, name):
                    v.append(f"{s.meta.stream_id} grid: unknown parameter {name!r}")
                    continue
                for value in values:
                    probe = dataclasses.replace(s.seed, **{name: value})
                    for m in validate_params(probe, s.meta).violations:
                        v.append(f"{s.meta.stream_id} grid {name}={value!r}: {m}")
        ids = [s.meta.stream_id for s in self.sensors]
        if len(set(ids)) != len(ids):
            v.append("duplicate sensor stream ids")
        for name, _ in self.scenario_grid.axes:
            if name not in ScenarioParams.__dataclass_fields__:
                v.append(f"scenario grid: unknown parameter {name!r}")
        if self.max_iterations is not None and self.max_iterations < 1:
            v.append("max_iterations must be >= 1")
        if self.wall_budget is not None and not self.wall_budget > 0:
            v.append("wall_budget must be > 0")
        if not self.cell_size > 0:
            v.append("cell_size must be > 0")
        return v

    def to_dict(self) -> dict[str, Any]:
        return {
            "campaign_index": self.campaign_index,
            "master_seed": self.master_seed,
            "scenario": {
                "seeds": [s.to_dict() for s in self.scenario_seeds],
                "grid": {k: [_jsonable(x) for x in v] for k, v in self.scenario_grid.axes},
            },
            "sensors": [
                {
                    "stream_id": s.meta.stream_id,
                    "kind": s.meta.kind,
                    "perception_range": s.meta.perception_range,
                    "seed": s.seed.to_dict(),
                    "grid": {k: list(v) for k, v in s.grid.axes},
                }
                for s in self.sensors
            ],
            "stop": {
                "max_iterations": self.max_iterations,
                "wall_budget": self.wall_budget,
                "stop_on_first_finding": self.stop_on_first_finding,
            },
            "thresholds": self.thresholds.to_dict(),
            "plane": {"cell_size": self.cell_size},
            "planner": {"d_slow": self.planner.d_slow, "d_stop": self.planner.d_stop},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CampaignConfig:
        scenario = d.get("scenario", {})
        seeds = scenario.get("seeds") or ([scenario["seed"]] if "seed" in scenario else [])
        sensors = []
        lidar, camera = LidarSpec(), CameraSpec()
        for s in d.get("sensors", []):
            kind = s.get("kind", LIDAR)
            seed = dict(s["seed"])
            seed.setdefault("stream_id", s["stream_id"])
            if kind == CAMERA:
                meta = SensorMeta(s["stream_id"], CAMERA, float("inf"), camera.width, camera.height)
            else:
                meta = SensorMeta(s["stream_id"], LIDAR, float(s.get("perception_range", lidar.max_range)))
            sensors.append(SensorSetup(meta, SensorFuzzParams.from_dict(seed), mutator.GridSpec.from_mapping(s.get("grid"))))
        stop = d.get("stop", {})
        planner = d.get("planner", {})
        return cls(
            scenario_seeds=tuple(ScenarioParams.from_dict(s) for s in seeds),
            sensors=tuple(sensors),
            scenario_grid=mutator.GridSpec.from_mapping(scenario.get("grid")),
            max_iterations=stop.get("max_iterations"),
            wall_budget=stop.get("wall_budget"),
            stop_on_first_finding=bool(stop.get("stop_on_first_finding", False)),
            thresholds=OracleThresholds(**d.get("thresholds", {})),
            master_seed=int(d.get("master_seed", 0)),
            campaign_index=int(d.get("campaign_index", 0)),
            cell_size=float(d.get("plane", {}).get("cell_size", 0.1)),
            planner=PlannerConfig(**planner),
        )

    @classmethod
    def load(cls, path) -> CampaignConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _jsonable(x):
    if isinstance(x, (list, tuple)):
        return [_jsonable(i) for i in x]
    if hasattr(x, "__dataclass_fields__"):
        return dataclasses.asdict(x)
    return x


@dataclass
class CampaignReport:
    iterations: list[IterationRecord] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    invalid_scenarios: list[dict[str, Any]] = field(default_factory=list)
    stop_reason: str = ""
    wall_time: float = 0.0

    @property
    def aborted(self) -> bool:
        return self.stop_reason == STOP_ABORTED

    def summary(self) -> dict[str, Any]:
        return {
            "stop_reason": self.stop_reason,
            "iterations": [r.iteration_id for r in self.iterations],
            "findings": [{"finding_id": f.finding_id, "kind": f.kind, "iteration_id": f.iteration_id} for f in self.findings],
            "invalid_scenarios": self.invalid_scenarios,
        }


class _StopCampaign(Exception):
    def __init__(self, reason):
        self.reason = reason


class _SimAdapter:
    """Simulator endpoint as seen by the broker."""

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.scenario: ScenarioParams | None = None
        self.inbox: list[ControlCommand] = []
        self.frames = None

    def on_lifecycle(self, verb: str) -> None:
        if verb == "start":
            self.inbox.clear()
            self.frames = self.sim.reset(self.scenario)
        elif verb in ("stop", "reset"):
            self.inbox.clear()

    def deliver_control(self, cmd: ControlCommand) -> None:
        self.inbox.append(cmd)

    def step(self):
        if len(self.inbox) != 1:
            raise InfrastructureFailure(f"expected one control command per tick, got {len(self.inbox)}")
        self.frames = self.sim.step(self.inbox.pop())
        return self.frames


class _AdsAdapter:
    def __init__(self, ads: ReferenceADS):
        self.ads = ads
        self.scenario: ScenarioParams | None = None

    def on_lifecycle(self, verb: str) -> None:
        if verb == "start":
            self.ads.reset(self.scenario)


class Orchestrator:
    """Runs campaigns against the bundled simulator and reference ADS.

    Args:
        config: campaign configuration.
        store: campaign store; ``None`` keeps results in memory only.
        transport: ``"inproc"`` or ``"socket"`` (length-prefixed JSON over
            loopback TCP between simulator, broker and ADS).
    """

    def __init__(self, config: CampaignConfig, store: CampaignStore | None = None, transport: str = "inproc"):
        problems = config.violations()
        if problems:
            raise ParameterError(problems)
        if transport not in ("inproc", "socket"):
            raise ValueError(f"unknown transport {transport!r}")
        self.config = config
        self.store = store
        self.transport = transport
        self.lidar = LidarSpec()
        self.camera = CameraSpec()
        self.sim = Simulator(self.lidar, self.camera)
        self.ads = ReferenceADS(planner=config.planner)
        self._sim_ep = _SimAdapter(self.sim)
        self._ads_ep = _AdsAdapter(self.ads)
        self.broker = Broker(self._sim_ep, self._ads_ep)
        self.meta = {s.meta.stream_id: s.meta for s in config.sensors}
        for s in config.sensors:
            if s.meta.kind == LIDAR:
                plugin = maskgen.LidarFuzzer(
                    s.meta.stream_id,
                    maskgen.PlaneSpec(config.cell_size),
                    self.lidar.mount,
                    self.lidar.ring_elevations_deg,
                )
            else:
                plugin = maskgen.CameraFuzzer(s.meta.stream_id)
            self.broker.register(plugin)
        self.events: list[dict[str, Any]] = []
        self.ticks = 0
        self._seq = 0

    # -- bookkeeping ---------------------------------------------------
    def _event(self, name: str, **data) -> None:
        ev = {"seq": self._seq, "event": name, **data}
        self._seq += 1
        self.events.append(ev)
        if self.store is not None:
            self.store.log_event(ev)

    # -- one drive -----------------------------------------------------
    def drive(self, scenario: ScenarioParams, timeout_s: float, masks=None) -> RunResult:
        """Execute one full run of ``scenario`` through the broker.

        ``masks`` maps stream id to ``(mask, params)``; ``None`` or empty
        runs unfuzzed.
        """
        self.broker.lifecycle("reset")
        if masks:
            self.broker.arm(masks)
        else:
            self.broker.disarm()
        self._sim_ep.scenario = scenario
        self._ads_ep.scenario = scenario
        timeout_ms = int(math.ceil(timeout_s * 1000.0))
        if self.transport == "socket":
            return self._drive_socket(scenario, timeout_ms)
        self.broker.lifecycle("start")
        try:
            state, cloud, cam = self._sim_ep.frames
            traj = []
            while True:
                traj.append(TrajectoryRecord(state.sim_time, state.ego.x, state.ego.y, state.ego.yaw, state.ego.speed))
                done = self._termination(scenario, state, timeout_ms)
                if done is not None:
                    break
                out_cloud = self.broker.process_sensor_frame(BrokerMessage.sensor(cloud))
                self.broker.process_sensor_frame(BrokerMessage.sensor(cam))
                if out_cloud is None:
                    raise InfrastructureFailure("LiDAR frame dropped by broker")
                self.broker.forward_control(self.ads.step(out_cloud.payload, state.ego))
                state, cloud, cam = self._sim_ep.step()
                self.ticks += 1
        finally:
            self.broker.lifecycle("stop")
        return self._result(traj, done)

    def _drive_socket(self, scenario: ScenarioParams, timeout_ms: int) -> RunResult:
        bridge = SocketBridge(self.broker)
        sim_client = SocketClient(bridge.addresses["sim"])
        ads_client = SocketClient(bridge.addresses["ads"])
        bridge.accept()
        self.sim.reset(scenario)
        self.ads.reset(scenario)
        self.broker.sim, self.broker.ads = bridge.sim_ep, bridge.ads_ep
        try:
            self.broker.lifecycle("start")
            state, cloud, cam = self.sim.observe()
            traj = []
            while True:
                traj.append(TrajectoryRecord(state.sim_time, state.ego.x, state.ego.y, state.ego.yaw, state.ego.speed))
                done = self._termination(scenario, state, timeout_ms)
                if done is not None:
                    break
                sim_client.send(BrokerMessage.sensor(cloud))
                sim_client.send(BrokerMessage.sensor(cam))
                got = {}
                while len(got) < 2:
                    if bridge.failures:
                        raise InfrastructureFailure(str(bridge.failures[0]))
                    msg = ads_client.recv("pointcloud", "camera")
                    got[msg.type] = msg
                ads_client.send(BrokerMessage("control", self.ads.step(got["pointcloud"].payload, state.ego)))
                cmd = sim_client.recv("control").payload
                state, cloud, cam = self.sim.step(cmd)
                self.ticks += 1
            self.broker.lifecycle("stop")
        except (ConnectionError, OSError) as exc:
            raise InfrastructureFailure(f"socket transport failed: {exc}") from exc
        finally:
            bridge.close()
            sim_client.close()
            ads_client.close()
            self.broker.sim, self.broker.ads = self._sim_ep, self._ads_ep
            if self.broker.state != "stopped":
                self.broker.lifecycle("reset")
        return self._result(traj, done)

    def _termination(self, scenario, state, timeout_ms):
        ego = state.ego
        if math.hypot(ego.x - scenario.goal[0], ego.y - scenario.goal[1]) <= GOAL_TOLERANCE:
            return "goal"
        if self.sim.collided():
            return "collision"
        if state.sim_time >= timeout_ms:
            return "timeout"
        return None

    def _result(self, traj, done) -> RunResult:
        counts = tuple(
            sorted(
                [(f"in:{k}", v) for k, v in self.broker.frames_in.items()]
                + [(f"out:{k}", v) for k, v in self.broker.frames_out.items()]
                + [(f"fuzzed:{k}", v) for k, v in self.broker.fuzzed.items()]
            )
        )
        return RunResult(tuple(traj), done == "goal", done == "collision", done == "timeout", counts)

    # -- iterations ----------------------------------------------------
    def golden_timeout(self, scenario: ScenarioParams) -> float:
        return 3.0 * get_route(scenario.route_id).length / scenario.target_speed + 10.0

    def create_golden_run(self, scenario: ScenarioParams) -> GoldenRun:
        return oracle.create_golden_run(scenario, lambda sc: self.drive(sc, self.golden_timeout(sc)))

    def masks_for(self, params: tuple[SensorFuzzParams, ...], rng_seed: int):
        return {
            p.stream_id: (maskgen.generate_mask(p, derive_seed(rng_seed, p.stream_id), self.meta[p.stream_id]), p)
            for p in params
        }

    def run_sensor_iteration(
        self,
        params: tuple[SensorFuzzParams, ...],
        golden: GoldenRun,
        scenario_index: int = 0,
        sensor_index: int = 0,
        rng_seed: int | None = None,
    ) -> tuple[IterationRecord, list[Finding]]:
        """Mask, drive, evaluate. Returns the record and its findings (not persisted)."""
        cfg = self.config
        if rng_seed is None:
            rng_seed = derive_seed(cfg.master_seed, scenario_index, sensor_index)
        iid = iteration_id(cfg.campaign_index, scenario_index, sensor_index)
        scenario = golden.scenario_params
        masks = self.masks_for(params, rng_seed)
        mask_info = {sid: _mask_summary(m, derive_seed(rng_seed, sid)) for sid, (m, _) in masks.items()}
        base = dict(
            campaign_index=cfg.campaign_index,
            scenario_index=scenario_index,
            sensor_index=sensor_index,
            scenario_params=scenario,
            sensor_params=tuple(params),
            rng_seed=rng_seed,
            masks=mask_info,
        )
        try:
            run = self.drive(scenario, cfg.thresholds.completion_timeout * golden.duration, masks)
            metrics = oracle.compute_metrics(golden, run.trajectory, cfg.thresholds, run.goal_reached)
        except InfrastructureFailure as exc:
            return IterationRecord(**base, status="failed", failure=f"infrastructure: {exc}"), []
        ctx = RunContext(iid, tuple(params), scenario, run.collision, run.timeout)
        found = oracle.evaluate(metrics, cfg.thresholds, ctx)
        found = [
            Finding(f.kind, f.iteration_id, f.sensor_params, f.scenario_params, f.evidence, f"F-{iid}-{k}")
            for k, f in enumerate(found)
        ]
        record = IterationRecord(
            **base,
            status="finding" if found else "finished",
            finding_ids=tuple(f.finding_id for f in found),
            finding_kinds=tuple(f.kind for f in found),
            metrics=metrics.to_dict(),
            trajectory_summary=_trajectory_summary(run),
            frame_counts=dict(run.frame_counts),
        )
        return record, found

    def run_scenario_iteration(self, scenario_index: int, scenario: ScenarioParams, report: CampaignReport, started: float):
        self._event("ScenarioSetup", scenario_index=scenario_index, scenario=scenario.to_dict())
        try:
            golden = self.create_golden_run(scenario)
        except ScenarioInvalid as exc:
            self._event("ScenarioInvalid", scenario_index=scenario_index, reason=str(exc))
            report.invalid_scenarios.append({"scenario_index": scenario_index, "reason": str(exc)})
            return []
        if self.store is not None:
            self.store.persist_golden(scenario_index, golden)
        self._event("GoldenRun", scenario_index=scenario_index, duration=golden.duration)

        cursors = []
        first = []
        for s in self.config.sensors:
            p, cur = mutator.init_from_seed(s.seed, s.grid, s.meta)
            first.append(p)
            cursors.append(cur)
        params = tuple(first)
        records = []
        sensor_index = 0
        while params:
            record, found = self.run_sensor_iteration(params, golden, scenario_index, sensor_index)
            if self.store is not None:
                for f in found:
                    self.store.persist(f)
                self.store.persist(record)
                self.store.persist_wallclock(record.iteration_id, {"finished_at": time.time()})
            self._event(
                "SensorIteration",
                iteration_id=record.iteration_id,
                status=record.status,
                finding_kinds=list(record.finding_kinds),
            )
            records.append(record)
            report.iterations.append(record)
            report.findings.extend(found)
            if record.status == "failed":
                raise _StopCampaign(STOP_ABORTED)
            if self.config.stop_on_first_finding and found:
                raise _StopCampaign(STOP_FIRST_FINDING)
            if self.config.max_iterations is not None and len(report.iterations) >= self.config.max_iterations:
                raise _StopCampaign(STOP_MAX_ITERATIONS)
            if self.config.wall_budget is not None and time.monotonic() - started >= self.config.wall_budget:
                raise _StopCampaign(STOP_WALL_BUDGET)
            sensor_index += 1
            params = tuple(p for p in (mutator.next_params(c) for c in cursors) if p is not mutator.Exhausted)
        return records

    def scenarios(self):
        """Scenario stream: each seed unchanged, then its valid grid points."""
        for seed in self.config.scenario_seeds:
            first, cursor = mutator.init_scenario_cursor(seed, self.config.scenario_grid, validate_scenario)
            yield first
            while (sc := mutator.next_scenario(cursor)) is not mutator.Exhausted:
                yield sc

    def run_campaign(self) -> CampaignReport:
        report = CampaignReport()
        started = time.monotonic()
        if self.store is not None:
            self.store.open(self.config.to_dict())
        self._event("CampaignStart", master_seed=self.config.master_seed)
        try:
            for scenario_index, scenario in enumerate(self.scenarios()):
                self.run_scenario_iteration(scenario_index, scenario, report, started)
                if self.config.wall_budget is not None and time.monotonic() - started >= self.config.wall_budget:
                    raise _StopCampaign(STOP_WALL_BUDGET)
            report.stop_reason = STOP_EXHAUSTED
        except _StopCampaign as stop:
            report.stop_reason = stop.reason
        except InfrastructureFailure as exc:
            log.error("campaign aborted: %s", exc)
            report.stop_reason = STOP_ABORTED
        report.wall_time = time.monotonic() - started
        self._event("CampaignEnd", stop_reason=report.stop_reason)
        if self.store is not None:
            self.store.close(report.summary())
        return report


def _mask_summary(mask: maskgen.FuzzingMask, seed: int) -> dict[str, Any]:
    cells = mask.cells
    bbox = None if not len(cells) else [int(cells[:, 0].min()), int(cells[:, 1].min()), int(cells[:, 0].max()), int(cells[:, 1].max())]
    return {
        "digest": mask.digest(),
        "effective_count": mask.effective_count,
        "requested_count": mask.requested_count,
        "bbox": bbox,
        "seed": seed,
    }


def _trajectory_summary(run: RunResult) -> dict[str, Any]:
    first, last = run.trajectory[0], run.trajectory[-1]
    xy = np.array([(r.x, r.y) for r in run.trajectory])
    return {
        "duration_s": (last.sim_time - first.sim_time) / 1000.0,
        "final_pose": [last.x, last.y, last.yaw],
        "final_speed": last.speed,
        "distance_travelled": float(np.hypot(*np.diff(xy, axis=0).T).sum()) if len(xy) > 1 else 0.0,
        "samples": len(run.trajectory),
        "goal_reached": run.goal_reached,
        "collision": run.collision,
        "timeout": run.timeout,
    }


def replay_iteration(campaign_dir, iteration_id_: str, transport: str = "inproc"):
    """Re-execute a stored iteration from its saved inputs.

    Returns:
        (stored record, replayed record, replayed findings)
    """
    store = CampaignStore(campaign_dir)
    config = CampaignConfig.from_dict(store.load_config())
    scenario, params, seed = store.load_for_replay(iteration_id_)
    stored = store.load_iteration(iteration_id_)
    golden = store.load_golden(stored.scenario_index)
    orch = Orchestrator(config, None, transport)
    record, found = orch.run_sensor_iteration(params, golden, stored.scenario_index, stored.sensor_index, seed)
    return stored, record, found
