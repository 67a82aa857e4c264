"""On-disk campaign store.

Layout under the campaign root::

    campaign.json                      campaign configuration
    golden/<scenario>.jsonl            golden trajectory, one record per line
    golden/<scenario>.scenario.json    scenario the golden run belongs to
    iterations/<c>-<s>-<k>.json        one IterationRecord
    iterations/<c>-<s>-<k>.wallclock.json   wall-clock sidecar
    events.log                         orchestrator events, JSON Lines
    findings/<id>.json                 one finding, written when detected
    findings.json                      array of all findings (written on close)
    report.json                        campaign summary (written on close)
    manifest.json                      sha256 of every file (written on close)

Files are written once. ``events.log`` only grows.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

from .core import Finding, IterationRecord, ScenarioParams, SensorFuzzParams, TrajectoryRecord
from .oracle import GoldenRun


class RepositoryError(Exception):
    """Writing to the store failed; the campaign must abort."""


class LoadError(Exception):
    """A stored file is missing or unreadable."""

    def __init__(self, path, message, offset=None):
        self.path = Path(path)
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{path}: {message}{where}")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _read_json(path: Path):
    try:
        text = path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise LoadError(path, "no such file") from None
    except UnicodeDecodeError as exc:
        raise LoadError(path, "not UTF-8", exc.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise LoadError(path, f"invalid JSON ({exc.msg})", offset) from None


class CampaignStore:
    """Single-writer store for one campaign directory."""

    def __init__(self, root):
        self.root = Path(root)
        self._findings: list[Finding] = []
        self._closed = False

    # -- writing -------------------------------------------------------
    def _write_once(self, rel: str, text: str) -> Path:
        if self._closed:
            raise RepositoryError("store is closed")
        path = self.root / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "x", encoding="utf-8") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
        except FileExistsError:
            raise RepositoryError(f"{path} already exists; store is append-only") from None
        except OSError as exc:
            raise RepositoryError(f"cannot write {path}: {exc}") from exc
        return path

    def open(self, config: dict[str, Any]) -> None:
        if (self.root / "campaign.json").exists():
            raise RepositoryError(f"{self.root} already holds a campaign")
        self._write_once("campaign.json", _dumps(config))

    def persist(self, obj) -> str:
        """Write one record and return its stable id."""
        if isinstance(obj, IterationRecord):
            rid = obj.iteration_id
            self._write_once(f"iterations/{rid}.json", _dumps(obj.to_dict()))
            return rid
        if isinstance(obj, Finding):
            fid = obj.finding_id or f"F{len(self._findings)}"
            if obj.finding_id != fid:
                obj = Finding(obj.kind, obj.iteration_id, obj.sensor_params, obj.scenario_params, obj.evidence, fid)
            self._write_once(f"findings/{fid}.json", _dumps(obj.to_dict()))
            self._findings.append(obj)
            return fid
        raise TypeError(f"cannot persist {type(obj).__name__}")

    def persist_golden(self, scenario_index: int, golden: GoldenRun) -> str:
        lines = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in golden.trajectory)
        self._write_once(f"golden/{scenario_index}.jsonl", lines)
        self._write_once(f"golden/{scenario_index}.scenario.json", _dumps(golden.scenario_params.to_dict()))
        return str(scenario_index)

    def persist_wallclock(self, iteration_id: str, data: dict[str, Any]) -> None:
        self._write_once(f"iterations/{iteration_id}.wallclock.json", _dumps(data))

    def log_event(self, event: dict[str, Any]) -> None:
        if self._closed:
            raise RepositoryError("store is closed")
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            with open(self.root / "events.log", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        except OSError as exc:
            raise RepositoryError(f"cannot append event: {exc}") from exc

    def close(self, summary: dict[str, Any] | None = None) -> None:
        if self._closed:
            return
        self._write_once("findings.json", _dumps([f.to_dict() for f in self._findings]))
        if summary is not None:
            self._write_once("report.json", _dumps(summary))
        self._write_once("manifest.json", _dumps(self.checksums()))
        self._closed = True

    # -- reading -------------------------------------------------------
    def checksums(self) -> dict[str, str]:
        out = {}
        for path in sorted(self.root.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                out[path.relative_to(self.root).as_posix()] = hashlib.sha256(path.read_bytes()).hexdigest()
        return out

    def verify_manifest(self) -> list[str]:
        """Names of files whose content differs from the closing manifest."""
        manifest = _read_json(self.root / "manifest.json")
        current = self.checksums()
        return sorted(k for k in set(manifest) | set(current) if manifest.get(k) != current.get(k))

    def load_config(self) -> dict[str, Any]:
        return _read_json(self.root / "campaign.json")

    def load_iteration(self, iteration_id: str) -> IterationRecord:
        path = self.root / "iterations" / f"{iteration_id}.json"
        data = _read_json(path)
        try:
            return IterationRecord.from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(path, f"corrupt record ({exc})") from None

    def iteration_ids(self) -> list[str]:
        ids = [p.name[: -len(".json")] for p in (self.root / "iterations").glob("*.json") if not p.name.endswith(".wallclock.json")]
        return sorted(ids, key=lambda s: tuple(int(x) for x in s.split("-")))

    def load_golden(self, scenario_index: int) -> GoldenRun:
        path = self.root / "golden" / f"{scenario_index}.jsonl"
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise LoadError(path, "no such file") from None
        records = []
        offset = 0
        for line in raw.splitlines(keepends=True):
            try:
                records.append(TrajectoryRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise LoadError(path, f"bad trajectory line ({exc})", offset) from None
            offset += len(line.encode("utf-8"))
        scenario = ScenarioParams.from_dict(_read_json(self.root / "golden" / f"{scenario_index}.scenario.json"))
        return GoldenRun(scenario, tuple(records), True)

    def load_findings(self) -> list[Finding]:
        path = self.root / "findings.json"
        return [Finding.from_dict(d) for d in _read_json(path)]

    def load_events(self) -> list[dict[str, Any]]:
        path = self.root / "events.log"
        try:
            return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]
        except FileNotFoundError:
            raise LoadError(path, "no such file") from None

    def load_for_replay(self, iteration_id: str) -> tuple[ScenarioParams, tuple[SensorFuzzParams, ...], int]:
        """Inputs needed to re-execute an iteration: scenario, sensor params, rng seed."""
        rec = self.load_iteration(iteration_id)
        return rec.scenario_params, rec.sensor_params, rec.rng_seed
