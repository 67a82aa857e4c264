"""A whole campaign on disk, then a replay and a report.

The campaign directory holds everything needed to re-execute any
iteration. Replay reloads the stored scenario, parameters and seed and
must reach the same verdict.

    python3 demos/04_campaign_and_replay.py [OUT_DIR]
"""

import sys
import tempfile
from pathlib import Path

from fuzzsense import cli

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "campaign"
config = Path(__file__).parent / "reference_scenario.json"

print(f"$ fuzzsense run --config {config.name} --out {out}")
status = cli.main(["run", "--config", str(config), "--out", str(out)])
print(f"exit {status}\n")

print("$ fuzzsense replay --iteration 0-0-1")
cli.main(["replay", "--campaign", str(out), "--iteration", "0-0-1"])

print("\n$ fuzzsense report")
reports = out.parent / "report"
cli.main(["report", "--campaign", str(out), "--out", str(reports)])
print((reports / "metrics.csv").read_text())
