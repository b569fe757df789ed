#!/usr/bin/env python3
"""
obslab: observability and inverse-coefficient experiments
---------------------------------------------------------

Forward solvers, initial-to-boundary maps and Volterra deconvolution for the
damped wave and heat equations, with the inverse pipelines and the stability
sweeps built on them.

It uses:
  - numpy / scipy (finite differences, sparse solves, eigenpairs)
  - sympy (closed-form coefficients in the config files)

Usage examples:

  # 1) Simulate a problem and write its boundary trace
  python3 obslab_cli.py forward --config files/forward_wave.conf

  # 2) Recover a potential perturbation from heat measurements
  python3 obslab_cli.py invert-potential --config files/heat_potential_1d.conf --out runs/heat

  # 3) Sweep perturbation amplitudes and certify the stability modulus
  OBSLAB_THREADS=4 python3 obslab_cli.py stability-sweep --config files/sweep_heat.conf

  # 4) Re-certify a sweep table written earlier
  python3 obslab_cli.py certify --config files/certify.conf

Every run writes CSV/JSON files, report.json and manifest.json into its own
output directory (--out, or $OBSLAB_OUTPUT_DIR/<config>-<subcommand>).

Exit codes: 0 success, 1 config error, 2 numerical failure.
"""

import argparse
import asyncio
import logging
import os
import sys
import traceback
from pathlib import Path

from obslab.config import load_config
from obslab.errors import ConfigError, ObslabError
from obslab.experiments import run_job


# ---------------------------------------------------------------------
# Configuration & Constants
# ---------------------------------------------------------------------

DEFAULT_THREADS = int(os.getenv("OBSLAB_THREADS", "1"))
DEFAULT_OUTPUT_DIR = os.getenv("OBSLAB_OUTPUT_DIR", "runs").strip() or "runs"
DEFAULT_LOG_LEVEL = os.getenv("OBSLAB_LOG_LEVEL", "INFO").strip().upper() or "INFO"

LOG_FORMAT = "%(levelname)s: %(message)s"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

SUBCOMMANDS = {
    "forward": "Solve a forward problem and write its boundary trace",
    "deconvolve": "Invert a Volterra convolution y = λ∗h",
    "invert-source": "Recover a source f from a boundary trace",
    "invert-potential": "Recover a potential (and damping) from probe responses",
    "invert-damping": "Recover boundary damping profiles on the square",
    "verify-inequalities": "Evaluate the inequality suite and write the ledger",
    "stability-sweep": "Sweep perturbation amplitudes and fit the stability rate",
    "certify": "Certify a sweep table against a stability modulus",
}

log = logging.getLogger("obslab")


def configure_logging(level: str):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


# ---------------------------------------------------------------------
# Flag resolution (flag > environment > default)
# ---------------------------------------------------------------------


def resolve_threads(args) -> int:
    threads = args.threads if args.threads is not None else DEFAULT_THREADS
    if threads < 1:
        raise ConfigError(f"--threads must be at least 1, got {threads}")
    return threads


def resolve_output_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(DEFAULT_OUTPUT_DIR) / f"{Path(args.config).stem}-{args.command}"


def resolve_seed(args) -> int | None:
    """The --seed flag; None leaves the config's experiment.seed in place."""
    if args.seed is None:
        return None
    if not 0 <= args.seed < 2**64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
    return args.seed


def resolve_log_level(args) -> str:
    level = (args.log_level or DEFAULT_LOG_LEVEL).upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ConfigError(f"unknown log level '{level}'")
    return level


# ---------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------


async def do_run(args) -> dict:
    config = load_config(args.config, seed=resolve_seed(args))
    out = resolve_output_dir(args)
    threads = resolve_threads(args)
    log.info("%s: config %s, seed %d, %d thread(s), output %s",
             args.command, args.config, config.seed, threads, out)
    report = await asyncio.to_thread(run_job, args.command, config, out, threads)
    log.info("Done. Outputs in %s", out)
    return report


# ---------------------------------------------------------------------
# Argument parser
# ---------------------------------------------------------------------


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obslab", description="Observability and inverse-coefficient experiments")
    sub = p.add_subparsers(dest="command", required=True)

    for name, help_text in SUBCOMMANDS.items():
        ps = sub.add_parser(name, help=help_text)
        ps.add_argument("--config", required=True, help="Experiment config file")
        ps.add_argument(
            "--out", help="Output directory (default: $OBSLAB_OUTPUT_DIR/<config>-<subcommand>)"
        )
        ps.add_argument("--seed", type=int, help="Noise seed, overrides experiment.seed")
        ps.add_argument(
            "--threads", type=int, help="Worker threads (default: env OBSLAB_THREADS or 1)"
        )
        ps.add_argument(
            "--log-level", help="DEBUG, INFO, WARNING or ERROR (default: env OBSLAB_LOG_LEVEL or INFO)"
        )
        ps.set_defaults(func=do_run)

    return p


async def main_async(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(resolve_log_level(args))
        await args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ObslabError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    except Exception:
        traceback.print_exc()
        return EXIT_NUMERICAL
    return EXIT_OK


def run(argv: list[str] | None = None) -> int:
    return asyncio.run(main_async(argv))


def main():
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\nInterrupted, exiting.")
        sys.exit(130)


if __name__ == "__main__":
    main()
