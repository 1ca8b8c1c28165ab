"""Command-line scenario runner.

Usage::

    scatterlab {scatter,delay,calabi,verify} --config FILE [--out DIR] [--seed N]
               [--workers N] [--tolerance-profile {fast,default,strict}]

Exit codes: 0 success, 1 configuration error, 2 numerical-budget failure,
3 invariant-suite failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError
from .scenarios import EXIT_CONFIG, KINDS, load_scenario, run_scenario


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scatterlab", description="Classical scattering and time-delay scenarios.")
    sub = ap.add_subparsers(dest="kind", required=True)
    helps = {"scatter": "scattering map of a batch of initial conditions",
             "delay": "sojourn-time delay scans over radii",
             "calabi": "time-delay average against the derivative of the interaction volume",
             "verify": "run the invariant suite"}
    for kind in KINDS:
        p = sub.add_parser(kind, help=helps[kind])
        p.add_argument("--config", required=True, metavar="PATH", help="scenario YAML file")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--tolerance-profile", choices=("fast", "default", "strict"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_scenario(args.config, kind=args.kind, seed=args.seed, workers=args.workers,
                            tolerance_profile=args.tolerance_profile, out_dir=args.out)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, summary = run_scenario(cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in summary.get("checks", []) + summary.get("reports", []):
        print(line)
    for key in ("points", "ok", "flagged", "not_converged", "agreement"):
        if key in summary:
            print(f"{key}: {summary[key]}")
    print(f"wrote {cfg.out_dir} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
