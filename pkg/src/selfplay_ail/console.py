# Copyright (c) Microsoft. All rights reserved.

"""
Command-line interface of the self-play lab.

Commands
--------
run <config>
    Execute a TOML run file and write per-run artifacts plus ``summary.json``.
compare <spif.csv> <spin.csv>
    Compare reward magnitude and gradient stability of two artifacts.
verify
    Execute the property suite and print pass/fail per claim.

Exit codes are 0 on success, 1 on invalid input and 2 on runtime or
numerical failures (including failed claims).
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError
from rich.logging import RichHandler

from selfplay_ail.config import get_default_threads
from selfplay_ail.container import AppContainer
from selfplay_ail.errors import (
    ConfigValidationError,
    DimensionError,
    InvalidParameterError,
    SelfPlayError,
)
from selfplay_ail.experiments.artifacts import read_artifact
from selfplay_ail.experiments.compare import compare_dynamics
from selfplay_ail.experiments.runner import run
from selfplay_ail.experiments.verify import verify
from selfplay_ail.models.run_config import RunConfig, load_run_config, validate_run_config
from selfplay_ail.utils.display import (
    console,
    display_claims,
    display_comparison,
    display_header,
    display_run_summary,
)
from selfplay_ail.utils.observability import setup_observability

# Load environment variables at module import
load_dotenv()

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


def _parse_seeds(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigValidationError([f"--seeds: expected comma-separated integers, got {text!r}"]) from exc
    if not seeds:
        raise ConfigValidationError(["--seeds: at least one seed is required"])
    return seeds


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with the ``run``, ``compare`` and ``verify`` commands."""
    parser = argparse.ArgumentParser(
        prog="selfplay-ail",
        description="Tabular self-play imitation lab",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: SELFPLAY_AIL_THREADS)")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Execute a run file")
    run_parser.add_argument("config", type=Path, help="TOML run file")
    run_parser.add_argument("--out", type=Path, default=None, help="Override the output directory")
    run_parser.add_argument("--seeds", default=None, help="Override the seeds, e.g. 0,1,2")

    compare_parser = commands.add_parser("compare", help="Compare a SPIF artifact with a SPIN artifact")
    compare_parser.add_argument("spif", type=Path, help="SPIF iteration CSV")
    compare_parser.add_argument("spin", type=Path, help="SPIN iteration CSV")
    compare_parser.add_argument("--c", type=float, default=None, help="Reward penalty weight (default: from metadata)")

    verify_parser = commands.add_parser("verify", help="Run the property suite")
    verify_parser.add_argument("--seeds", default="0,1,2,3,4", help="Seeds of the multi-seed claims")
    return parser


def _load_config(container: AppContainer, args: argparse.Namespace) -> RunConfig:
    defaults = container.run_settings()
    config = load_run_config(args.config, defaults)
    overrides: dict[str, object] = {}
    seeds = _parse_seeds(args.seeds)
    if seeds is not None:
        overrides["seeds"] = seeds
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if overrides:
        config = validate_run_config({**config.model_dump(mode="json"), **overrides}, defaults)
    return config


def _execute(container: AppContainer, args: argparse.Namespace) -> int:
    match args.command:
        case "run":
            config = _load_config(container, args)
            display_header("Self-play run", f"{config.kind.value} · seeds {config.seeds} · {config.out_dir}")
            display_run_summary(run(config))
            return EXIT_OK
        case "compare":
            comparison = compare_dynamics(read_artifact(args.spif), read_artifact(args.spin), c=args.c)
            display_comparison(comparison)
            return EXIT_OK
        case "verify":
            seeds = _parse_seeds(args.seeds) or [0]
            display_header("Verification", f"seeds {seeds}")
            results = verify(seeds=seeds)
            display_claims(results)
            return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE
    raise ValueError(f"unknown command {args.command!r}")  # pragma: no cover


def main(argv: Sequence[str] | None = None) -> int:
    """
    Parse arguments, configure logging and dispatch a command.

    Parameters
    ----------
    argv : sequence of str, optional
        Arguments without the program name; ``sys.argv[1:]`` when omitted.

    Returns
    -------
    int
        Process exit code.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True)],
    )
    setup_observability()

    threads = args.threads if args.threads is not None else get_default_threads()
    if threads < 1:
        console.print(f"[red]Invalid input:[/red] --threads must be positive, got {threads}")
        return EXIT_INVALID

    # Initialize DI container and wire modules for dependency injection
    container = AppContainer()
    container.config.threads.from_value(threads)
    container.wire(packages=["selfplay_ail.experiments"])
    try:
        return _execute(container, args)
    except (ConfigValidationError, InvalidParameterError, DimensionError, ValidationError) as exc:
        console.print(f"[red]Invalid input:[/red] {exc}")
        return EXIT_INVALID
    except (SelfPlayError, OSError) as exc:
        console.print(f"[red]Error:[/red] {exc}")
        return EXIT_FAILURE
    finally:
        container.unwire()


def cli() -> None:
    """
    Synchronous entry point for the console command.

    This wrapper is required for pyproject.toml script entry points.
    """
    sys.exit(main())


if __name__ == "__main__":
    cli()
