"""Command-line entry point.

Exit codes: 0 on success, 2 when a run completes but breaches its configured
tolerances, 1 on configuration or solver errors.
"""

import argparse
import json
import sys

from tubenet.errors import TubenetError
from tubenet.harness import experiments
from tubenet.harness.config import load_config


def _add_common(sub):
    sub.add_argument("config", help="experiment config JSON")
    sub.add_argument("--out", default=None, help="output directory (overrides config)")
    sub.add_argument(
        "--allow-peclet",
        action="store_true",
        help="proceed on meshes whose cell Peclet number exceeds 2",
    )
    sub.add_argument(
        "--seed",
        type=int,
        default=None,
        help="seed for optional mesh point perturbation (jitter off by default)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tubenet",
        description="Hybrid 1D/2D steady solvers for thin tubular networks",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("run", "run the scenario named in the config"),
        ("sweep", "run the kappa-sweep comparison of the config's scenario"),
        ("convergence", "epsilon-convergence and MAPDD K-sweep study"),
        ("cells", "boundary-layer cell problem suite"),
        ("export-mesh", "triangulate the geometry and write the mesh file"),
    ):
        _add_common(subs.add_parser(name, help=desc))
    return parser


_DISPATCH = {
    "straight": experiments.run_straight_channel,
    "bifurcation": experiments.run_bifurcation,
    "convergence": experiments.run_convergence,
    "mapdd": lambda cfg: _mapdd_report(cfg),
    "cells": experiments.run_cells,
}


def _mapdd_report(config):
    outdir = experiments._ensure_out(config, "out_mapdd")
    result = experiments.run_mapdd_sweep(config, outdir=outdir, artifacts=[])
    h1 = [row["h1_relative"] for row in result["sweep"]]
    report = {
        "scenario": "mapdd",
        **result,
        "pass": result["monotone"] and min(h1) <= 0.02,
    }
    experiments._write_report(outdir, report)
    return report


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, out=args.out,
                             allow_peclet=args.allow_peclet, seed=args.seed)
        if args.command == "run" or args.command == "sweep":
            runner = _DISPATCH.get(config.scenario)
            if runner is None:
                print(f"error: config scenario {config.scenario!r} has no runner",
                      file=sys.stderr)
                return 1
            report = runner(config)
        elif args.command == "convergence":
            report = experiments.run_convergence(config)
        elif args.command == "cells":
            report = experiments.run_cells(config)
        elif args.command == "export-mesh":
            report = experiments.export_mesh(config)
        else:  # pragma: no cover
            return 1
    except TubenetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = {k: v for k, v in report.items() if not isinstance(v, (list, dict))}
    print(json.dumps(summary, sort_keys=True, default=float))
    return 0 if report.get("pass", True) else 2


if __name__ == "__main__":
    sys.exit(main())
