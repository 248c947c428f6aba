#!/usr/bin/env python3
"""Simulate all four allocation policies on the base market calibration.

Writes per-policy trajectory tables plus summary.json into --out, and
prints a one-line cost summary per policy.  This is the quick "does the
whole pipeline hold together" experiment; see sweep_eta.py for the
flexibility sweep.
"""

import argparse
from pathlib import Path

from permitsim.cli import PRESETS, build_scenario, run_simulate
from permitsim.policies import PolicyKind


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="paper-2020-base", choices=sorted(PRESETS))
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/baseline")
    args = ap.parse_args()

    raw = {
        "preset": args.preset,
        "simulation": {"n_paths": args.paths, "n_steps": args.steps, "seed": args.seed},
    }
    config = build_scenario(raw)
    kinds = [
        PolicyKind.OPTIMAL_DYNAMIC,
        PolicyKind.STATIC,
        PolicyKind.TAX,
        PolicyKind.MSR,
    ]
    summary = run_simulate(config, Path(args.out), kinds=kinds)

    for name, rep in summary["policies"].items():
        cf = rep["closed_form"]
        cf_txt = f"{cf:.4e}" if cf is not None else "   (MC only)"
        print(
            f"{name:>16}: cost {rep['mc_estimate']:.4e} +- {rep['mc_stderr']:.1e} EUR"
            f"  closed form {cf_txt}"
        )
    print(f"tables written to {args.out}/")


if __name__ == "__main__":
    main()
