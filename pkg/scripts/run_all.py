#!/usr/bin/env python3
"""Run every experiment in configs/ and write results under results/.

    python scripts/run_all.py [--threads N] [--quick]

--quick cuts replications to 4 for a smoke run.
"""

import argparse
import sys
from pathlib import Path

from bermudan_lpr.cli import run

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

JOBS = [
    ("price", "benchmark"),
    ("lattice", "benchmark"),
    ("bandwidth-study", "benchmark"),
    ("rate-study", "linear_margin_chain"),
    ("rate-study", "digital"),
    ("boundary-study", "digital"),
    ("boundary-study", "power_put"),
    ("boundary-study", "uniform_margins"),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--quick", action="store_true")
    parser.add_argument("--out", type=Path, default=ROOT / "results")
    args = parser.parse_args()
    failed = 0
    for command, name in JOBS:
        argv = [command, "--config", str(CONFIGS / f"{name}.toml"),
                "--out", str(args.out / f"{name}-{command}"), "--threads", str(args.threads)]
        if args.quick:
            argv += ["--replications", "4"]
        print(f"== {command} {name}", flush=True)
        failed += run(argv) != 0
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
