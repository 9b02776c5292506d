#!/usr/bin/env python
"""Run the bonded-bar benchmark and print a short report.

Writes energies.csv, forces.csv, mixity.csv, snapshots/, and meta.json
into the configured output directory (override with --out).
"""

import argparse
import sys
from pathlib import Path

from delam2d import load_config, run_single


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config",
        default=str(Path(__file__).resolve().parents[1] / "benchmark.json"),
        help="configuration path (default: repository benchmark.json)",
    )
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args()

    config = load_config(args.config)
    out = args.out if args.out else config.outputs.directory
    result = run_single(config, out)
    traj = result.trajectory
    ledger = result.ledger
    print(f"output directory: {result.out_dir}")
    print(f"steps: {traj.n_steps}, final time: {traj.times[-1]:g} s")
    print(f"full debonding at t = {traj.t_full_debond} s")
    print(f"external work: {ledger.external_work[-1]:.6e} J/m")
    print(f"debonding dissipation: {ledger.interface_dissipated[-1]:.6e} J/m")
    print(f"viscous dissipation: {ledger.viscous_dissipated[-1]:.6e} J/m")
    print(f"energy gap (work - stored - dissipated): {ledger.gap[-1]:.6e} J/m")
    return 0


if __name__ == "__main__":
    sys.exit(main())
