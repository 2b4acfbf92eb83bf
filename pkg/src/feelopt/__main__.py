#!/usr/bin/python3

"""
Entry point script for feelopt.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from feelopt.core.errors import ConfigError, FeelError, FitError
from feelopt.core.fitting import GapFit
from feelopt.core.pipeline import (RunArtifact, fit_probes, optimize_plan, prepare_data,
                                   rate_check, run_checks, run_oracle, run_pipeline, run_probes,
                                   simulate_sweep)
from feelopt.core.scenario import ScenarioConfig, load_config, sample_scenario
from feelopt.ui.console import print_json, print_summary
from feelopt.utils.report import build_summary, emit_report

logger = logging.getLogger("feelopt")

VERBS = ("sweep", "fit", "optimize", "pipeline", "oracle")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog="feelopt",
        description="feelopt - quantized federated edge learning simulator and training-time optimizer"
    )
    parser.add_argument(
        "verb",
        choices=VERBS,
        help="Stage to run: sweep, fit, optimize, pipeline or oracle"
    )
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="Flat JSON scenario file; missing keys keep their defaults"
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Overrides the seed in the config"
    )
    parser.add_argument(
        "--out",
        type=str,
        default="feelopt-out",
        help="Directory for the run's files"
    )
    parser.add_argument(
        "--fit",
        type=str,
        default=None,
        help="Reuse a fit.json instead of running the probes (sweep, optimize, oracle)"
    )
    parser.add_argument(
        "--check-rate",
        action="store_true",
        help="oracle: also compare the closed-form rate with numerical quadrature"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    return parser.parse_args(argv)


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)

    return cfg


def load_fit(path: str) -> GapFit:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return GapFit.from_dict(json.load(f))
    except OSError as e:
        raise ConfigError(f"cannot read fit {path}: {e}")
    except json.JSONDecodeError as e:
        raise FitError(f"fit {path} is not valid JSON: {e}")


def run_verb(args: argparse.Namespace, artifact: RunArtifact, show_progress: bool) -> None:
    """Run the stages a verb needs, filling in the artifact as they finish."""

    cfg = artifact.config
    if args.verb == "pipeline":
        run_pipeline(cfg, artifact, show_progress)
        print_summary(build_summary(artifact))
        return

    try:
        data = None
        if args.verb in ("fit", "sweep") or args.fit is None:
            data = prepare_data(cfg)

        if args.fit is not None:
            artifact.fit = load_fit(args.fit)
        else:
            probes = run_probes(cfg, data, show_progress)
            artifact.traces = list(probes)
            artifact.fit = fit_probes(cfg, probes)

        if args.verb == "fit":
            artifact.check_traces = run_checks(cfg, data, show_progress)
            print_json(artifact.fit.to_dict())
            return

        artifact.profiles, artifact.placements = sample_scenario(cfg)

        if args.verb == "optimize":
            artifact.plan = optimize_plan(cfg, artifact.profiles, artifact.fit)
            print_json(artifact.plan.to_dict())
        elif args.verb == "oracle":
            artifact.oracle_rows, artifact.oracle_best = run_oracle(cfg, artifact.profiles,
                                                                    artifact.fit)
            print_json(artifact.oracle_best.to_dict())
            if args.check_rate:
                print_json(rate_check(artifact.profiles, cfg.network()))
        else:
            artifact.sweep = simulate_sweep(cfg, data, artifact.profiles, artifact.fit,
                                            show_progress)
            print_json(artifact.sweep)
    except Exception as e:
        artifact.failure = f"{type(e).__name__}: {e}"
        raise


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point for the application."""
    args = parse_args(argv)
    configure_logging(args)
    show_progress = not args.quiet and sys.stderr.isatty()

    try:
        cfg = resolve_config(args)
    except FeelError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code

    artifact = RunArtifact(cfg)
    code = 0
    try:
        run_verb(args, artifact, show_progress)
    except FeelError as e:
        print(f"Error: {e}", file=sys.stderr)
        code = e.exit_code
    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        if artifact.failure is None:
            artifact.failure = f"{type(e).__name__}: {e}"
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        code = 1

    try:
        emit_report(artifact, args.out)
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return code or 1

    return code


if __name__ == "__main__":
    sys.exit(main())
