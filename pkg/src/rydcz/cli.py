"""Command-line entry point: ``rydcz {optimize,evolve,sweep,score} --config PATH``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, campaign
from .config import ConfigError, load_config
from .de import CheckpointError
from .dynamics import IntegrationError
from .records import RecordError, load_controls

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

log = logging.getLogger("rydcz")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rydcz", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "optimize": "search pulse parameters with differential evolution",
        "evolve": "write population trajectories for saved controls",
        "sweep": "temperature x amplitude-offset robustness grid",
        "score": "print the fidelity report of saved controls as JSON",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
        p.add_argument("--controls", type=Path, help="controls JSON (required for evolve, sweep, score)")
        p.add_argument("--out", type=Path, help="output directory (default: run.out_dir)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--threads", type=int, help="worker processes for parallel evaluation")
        p.add_argument("--resume", type=Path, help="checkpoint to resume an optimization from")
        p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return parser


def _run(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, threads=args.threads)
    if args.command == "optimize":
        if args.controls is not None:
            raise ConfigError("optimize does not take --controls")
        outcome = campaign.cmd_optimize(cfg, args.out, args.resume)
        print(json.dumps({"out_dir": str(outcome.out_dir), "f_bell": outcome.report.f_bell,
                          "stop_reason": outcome.result.reason}))
        return EXIT_OK
    if args.resume is not None:
        raise ConfigError(f"{args.command} does not take --resume")
    if args.controls is None:
        raise ConfigError(f"{args.command} requires --controls")
    controls = load_controls(args.controls)
    if args.command == "evolve":
        written = campaign.cmd_evolve(cfg, controls, args.out)
        print(json.dumps({k: str(v) for k, v in written.items()}))
    elif args.command == "sweep":
        result = campaign.cmd_sweep(cfg, controls, args.out)
        print(json.dumps({"baseline_f_bell": result.baseline, "missing_cells": len(result.missing)}))
        if result.missing:
            return EXIT_NUMERICAL
    else:
        print(json.dumps(campaign.cmd_score(cfg, controls), indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _run(args)
    except (ConfigError, RecordError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (IntegrationError, FloatingPointError, ArithmeticError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
