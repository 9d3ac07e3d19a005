"""Run the desk-scale election, optionally with a fault script, and print the report summary.

    python3 scripts/desk_run.py [--faults configs/byzantine.faults] [--out runs/desk]
"""

import argparse
import json
import time
from pathlib import Path

from hbvote.config import load_config
from hbvote.sim import load_faults, run

HERE = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=HERE / "configs" / "desk.conf")
    ap.add_argument("--faults")
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()
    config = load_config(args.config)
    faults = load_faults(args.faults) if args.faults else []
    t0 = time.perf_counter()
    report = run(config, faults, args.out)
    elapsed = time.perf_counter() - t0
    print(report.tally.format())
    print(json.dumps(report.metrics, indent=2))
    print(f"exact: {report.exact}  incidents: {len(report.incidents)}  wall: {elapsed:.1f} s")


if __name__ == "__main__":
    main()
