"""Command-line front end.

``metransport <command> [--config PATH] [--out DIR] [--seed N]``

Commands: ``coeffs``, ``me-run``, ``walk``, ``pde-run``, ``compare`` and
``scenario <id>``. Exit status is 0 on success, 2 for invalid input and 3
for numerical failures.
"""
from __future__ import annotations

import argparse
import sys

from ..errors import NumericalError, ValidationError
from .config import SCENARIOS, SEED_MAX, default_config, load_config
from .scenarios import run_scenario, run_stage_command

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
STAGE_COMMANDS = ("coeffs", "me-run", "walk", "pde-run", "compare")


def _seed(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metransport", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment document (JSON)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=_seed, help="random seed (overrides the document)")

    helps = {
        "coeffs": "reduce the kernel to D, V' and V on the grid",
        "me-run": "evolve the lattice master equation",
        "walk": "simulate the random-walk ensemble",
        "pde-run": "march the configured diffusion equation",
        "compare": "compare two field CSV files",
    }
    for name in STAGE_COMMANDS:
        common(sub.add_parser(name, help=helps[name]))
    sc = sub.add_parser("scenario", help="run a preset scenario")
    sc.add_argument("scenario_id", choices=SCENARIOS)
    common(sc)
    return parser


def _load(args, scenario=None):
    if args.config:
        return load_config(args.config, seed=args.seed, scenario=scenario)
    return default_config(scenario or "custom", seed=args.seed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "scenario":
            cfg = _load(args, args.scenario_id)
            report = run_scenario(cfg, args.out)
        else:
            cfg = _load(args)
            report = run_stage_command(args.command, cfg, args.out)
    except ValidationError as exc:
        print(f"error: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = args.out or cfg.output_dir
    print(f"{report.scenario}: {len(report.metrics)} metrics written to {out}/report.json")
    return EXIT_OK


def _where(exc):
    stage = getattr(exc, "stage", None)
    return f"[stage {stage}] " if stage else ""


if __name__ == "__main__":
    sys.exit(main())
