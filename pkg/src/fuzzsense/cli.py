"""Command-line entry point.

Usage::

    fuzzsense run      --config CONFIG --out DIR [--seed N] [--transport inproc|socket]
    fuzzsense replay   --campaign DIR --iteration ID [--transport inproc|socket]
    fuzzsense report   --campaign DIR [--out DIR]   (default: current directory)
    fuzzsense validate --config CONFIG

Exit statuses: 0 success, 1 replay mismatch, 2 infrastructure abort,
64 bad flags or invalid configuration, 66 missing input file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema

from .core import FINDING_KINDS, ParameterError
from .orchestrator import CampaignConfig, Orchestrator, replay_iteration
from .repository import CampaignStore, LoadError, RepositoryError

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ABORT = 2
EXIT_USAGE = 64
EXIT_NOINPUT = 66

SEED_ENV = "FUZZSENSE_SEED"

METRIC_COLUMNS = (
    "max_lateral_deviation",
    "min_speed_ratio",
    "longest_immobile_span",
    "completion_time_ratio",
)


class UsageError(Exception):
    """Bad flags or an invalid configuration (exit 64)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def campaign_schema() -> dict:
    text = resources.files("fuzzsense").joinpath("schema/campaign.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _read_config(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no such file") from None
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def config_problems(data: dict) -> list[str]:
    """Schema errors first; bound checks only when the shape is right."""
    validator = jsonschema.Draft202012Validator(campaign_schema())
    problems = [
        f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
        for err in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    ]
    if problems:
        return problems
    try:
        return CampaignConfig.from_dict(data).violations()
    except (TypeError, ValueError) as exc:
        return [str(exc)]


def resolve_seed(flag: int | None, config_seed: int) -> int:
    """--seed beats the environment, which beats the config file."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return config_seed


def _need(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.verb} requires {', '.join(missing)}")


def cmd_validate(args) -> int:
    _need(args, "config")
    problems = config_problems(_read_config(args.config))
    for p in problems:
        print(f"invalid: {p}", file=sys.stderr)
    if problems:
        return EXIT_USAGE
    print(f"{args.config}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    _need(args, "config", "out")
    data = _read_config(args.config)
    problems = config_problems(data)
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_USAGE
    data["master_seed"] = resolve_seed(args.seed, data.get("master_seed", 0))
    out = Path(args.out)
    if (out / "campaign.json").exists():
        raise UsageError(f"{out} already holds a campaign")
    orch = Orchestrator(CampaignConfig.from_dict(data), CampaignStore(out), args.transport)
    report = orch.run_campaign()
    for rec in report.iterations:
        kinds = ",".join(rec.finding_kinds) or "-"
        print(f"{rec.iteration_id}\t{rec.status}\t{kinds}")
    print(f"stop: {report.stop_reason}; {len(report.iterations)} iterations, {len(report.findings)} findings")
    return EXIT_ABORT if report.aborted else EXIT_OK


def cmd_replay(args) -> int:
    _need(args, "campaign", "iteration")
    stored, replayed, _ = replay_iteration(args.campaign, args.iteration, args.transport)
    same = sorted(stored.finding_kinds) == sorted(replayed.finding_kinds)
    print(f"stored:   {','.join(stored.finding_kinds) or '-'}")
    print(f"replayed: {','.join(replayed.finding_kinds) or '-'}")
    print("verdict: " + ("match" if same else "MISMATCH"))
    return EXIT_OK if same else EXIT_MISMATCH


PARAM_DECIMALS = 3


def group_findings(findings) -> list[tuple]:
    """Collapse findings sharing a kind and (rounded) sensor parameters.

    Returns rows ``(kind, params key, count, iteration ids)`` sorted by key.
    """
    groups: dict[tuple, list[str]] = {}
    for f in findings:
        key = tuple(
            (p.stream_id, *(round(float(v), PARAM_DECIMALS) for k, v in p.to_dict().items() if k != "stream_id"))
            for p in f.sensor_params
        )
        groups.setdefault((f.kind, key), []).append(f.iteration_id)
    return [(kind, key, len(ids), sorted(set(ids))) for (kind, key), ids in sorted(groups.items())]


def write_report(campaign_dir, out_dir) -> tuple[Path, ...]:
    """Write findings.csv, findings_grouped.csv and metrics.csv.

    Output depends only on the store contents.
    """
    store = CampaignStore(campaign_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    findings_path = out / "findings.csv"
    grouped_path = out / "findings_grouped.csv"
    metrics_path = out / "metrics.csv"
    findings = store.load_findings()
    with open(findings_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["finding_id", "iteration_id", "kind", "stream_id", "center_x", "center_y", "distance", "evidence"])
        for f in findings:
            p = f.sensor_params[0]
            w.writerow([f.finding_id, f.iteration_id, f.kind, p.stream_id, p.center_x, p.center_y, p.distance,
                        json.dumps(f.evidence, sort_keys=True)])
    with open(grouped_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "params", "count", "iterations"])
        for kind, key, count, ids in group_findings(findings):
            w.writerow([kind, json.dumps(key), count, " ".join(ids)])
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration_id", "status", "goal_reached", *METRIC_COLUMNS, *FINDING_KINDS])
        for iid in store.iteration_ids():
            rec = store.load_iteration(iid)
            m = rec.metrics or {}
            w.writerow([
                iid,
                rec.status,
                m.get("goal_reached", ""),
                *(m.get(c, "") for c in METRIC_COLUMNS),
                *(int(k in rec.finding_kinds) for k in FINDING_KINDS),
            ])
    return findings_path, grouped_path, metrics_path


def cmd_report(args) -> int:
    _need(args, "campaign")
    root = Path(args.campaign)
    if not (root / "campaign.json").exists():
        raise FileNotFoundError(f"{root}: not a campaign directory")
    # the campaign directory is sealed by its manifest, so never write into it
    for path in write_report(root, args.out or "."):
        print(path)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "replay": cmd_replay, "report": cmd_report, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fuzzsense", description="Sensor fuzzing campaigns against the bundled driving simulator.")
    p.add_argument("verb", choices=sorted(COMMANDS))
    p.add_argument("--config")
    p.add_argument("--campaign")
    p.add_argument("--iteration")
    p.add_argument("--seed", type=int)
    p.add_argument("--transport", choices=("inproc", "socket"), default="inproc")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return COMMANDS[args.verb](args)
    except UsageError as exc:
        print(f"fuzzsense: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"fuzzsense: invalid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, LoadError) as exc:
        print(f"fuzzsense: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    except RepositoryError as exc:
        print(f"fuzzsense: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
