#!/usr/bin/env python
"""Run the mesh/time refinement study on the benchmark configuration.

Each level keeps the time-step-to-cell-size ratio of the base
configuration; results land in level_NNN subdirectories next to
convergence.csv and report.json.
"""

import argparse
import sys
from pathlib import Path

from delam2d import load_config, run_convergence


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config",
        default=str(Path(__file__).resolve().parents[1] / "benchmark.json"),
        help="configuration path (default: repository benchmark.json)",
    )
    parser.add_argument("--out", default="results/convergence", help="output directory")
    parser.add_argument("--levels", default="27,54,81", help="comma-separated resolutions")
    parser.add_argument("--threads", type=int, default=1, help="parallel level processes")
    args = parser.parse_args()

    config = load_config(args.config)
    levels = tuple(int(x) for x in args.levels.split(","))
    report = run_convergence(config, args.out, levels=levels, threads=args.threads)
    for (a, b), d in zip(zip(levels[:-1], levels[1:]), report.aggregate):
        print(f"levels {a} -> {b}: aggregate energy-curve distance {d:.6e}")
    print(f"norm ratios across levels: {report.norm_ratios}")
    print(f"report: {report.out_dir / 'report.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
