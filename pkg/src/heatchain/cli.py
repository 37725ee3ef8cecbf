"""Command-line front end.

    heatchain <subcommand> [--config FILE] [--seed S] [--out DIR] [--threads K]

Without ``--config`` the built-in desk-scale recipe for the subcommand is
used.  Exit codes: 0 success, 2 invalid config or arguments, 3 deadlock,
4 analysis failure.  Errors are reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import experiments, validation
from .engine import DeadlockError
from .experiments import ConfigError, ExperimentConfig
from .model import AnalysisError, DomainError
from .stats import FitError, QuadratureError

EXIT_OK, EXIT_CONFIG, EXIT_DEADLOCK, EXIT_ANALYSIS = 0, 2, 3, 4


def _error(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message}) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatchain",
                                     description="Energy-exchange chain experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in experiments.SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config (default: built-in recipe)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override output.directory")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p = sub.add_parser("validate", help="run the oracle checks")
    p.add_argument("--out", help="also write validate.json here")
    p.add_argument("--threads", type=int, default=1, help="accepted for uniformity; unused")
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    else:
        doc = experiments.recipe(args.command)
    if args.seed is not None:
        doc.setdefault("run", {})["seed"] = args.seed
    if args.out is not None:
        doc.setdefault("output", {})["directory"] = args.out
    return ExperimentConfig.from_dict(doc)


def _validate(args) -> int:
    results = validation.run_all()
    for c in results:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "validate.json"), "w") as fh:
            json.dump([c.__dict__ for c in results], fh, indent=2)
            fh.write("\n")
    if all(c.passed for c in results):
        return EXIT_OK
    failed = ", ".join(c.name for c in results if not c.passed)
    return _error(EXIT_ANALYSIS, "validation-failed", failed)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "validate":
            return _validate(args)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args)
        result = experiments.SUBCOMMANDS[args.command](cfg, threads=args.threads)
        for path in result.write(cfg.directory, cfg.prefix):
            print(path)
        return EXIT_OK
    except (ConfigError, DomainError) as exc:
        return _error(EXIT_CONFIG, "config", str(exc))
    except DeadlockError as exc:
        return _error(EXIT_DEADLOCK, "deadlock", str(exc))
    except (AnalysisError, FitError, QuadratureError) as exc:
        return _error(EXIT_ANALYSIS, "analysis", str(exc))


if __name__ == "__main__":
    sys.exit(main())
