#!/usr/bin/env python3
"""Print the headline numbers from a results/ tree written by run_all.py."""

import json
import sys
from pathlib import Path


def main(root: Path) -> None:
    for report in sorted(root.glob("*/report.json")):
        doc = json.loads(report.read_text())
        res = doc["result"]
        name = report.parent.name
        if doc["command"] == "price":
            print(f"{name}: v_hat {res['v_hat']:.4f} +- {res['se_hat']:.4f}, v_tilde {res['v_tilde']:.4f}")
        elif doc["command"] == "lattice":
            print(f"{name}: lattice value {res['value']:.4f} at {res['steps']} steps")
        elif doc["command"] == "bandwidth-study":
            for row in res["by_bandwidth"]:
                print(f"{name}: h={row['h']:g} v_hat {row['v_hat']:.4f} v_tilde {row['v_tilde']:.4f}")
        elif doc["command"] == "rate-study":
            print(f"{name}: slopes bias_hat {res['slope_bias_hat']}, bias_c {res['slope_bias_c']}")
        elif doc["command"] == "boundary-study":
            print(f"{name}: alpha_hat {res['alpha_hat']}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "results")
