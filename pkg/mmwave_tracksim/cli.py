from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

from . import get_version
from .config import ConfigError, SimulationConfig, apply_overrides, load_config
from .drop import DistanceBelowReference, NonPositiveTotalPower
from .evolution import DegenerateGeometry
from .fields import ExtentTooSmall, OutOfExtent
from .runner import RunLogger, SimulationError, make_maps, run_to_directory

RUN_DIR_TEMPLATE = "run-{seed}"

SIMULATION_ERRORS = (
    ConfigError,
    SimulationError,
    ExtentTooSmall,
    OutOfExtent,
    DistanceBelowReference,
    NonPositiveTotalPower,
    DegenerateGeometry,
    OSError,
)


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        required=True,
        help="Config file (.toml, or a manifest.json from an earlier run).",
    )
    parser.add_argument(
        "--out",
        required=True,
        help="Output directory (created if missing).",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="RNG seed; overrides [run] rng_seed in the config file.",
    )
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config key (TOML literal). Repeatable.",
    )
    parser.add_argument(
        "--quiet",
        action="store_true",
        help="Suppress [INFO]/[WARN] lines on stderr.",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Emit [SIM] JSON event lines on stderr.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"mmwave-tracksim {get_version()}",
        help="Show version and exit.",
    )


def build_simulate_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmwave-tracksim simulate",
        description="Run a spatially consistent channel simulation along a UT track.",
        epilog=(
            "Other commands:\n"
            "  mmwave-tracksim make-maps --config <file> --out <dir>\n"
            "Outputs: cir.csv, summary.csv, angles.csv, delays.csv, manifest.json"
        ),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    _add_common_arguments(parser)
    parser.add_argument(
        "--runs",
        type=int,
        default=1,
        help="Number of independent seeds (seed, seed+1, ...); each goes to <out>/run-<seed>/.",
    )
    parser.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Worker processes for --runs (default: CPU count).",
    )
    parser.add_argument(
        "--maps",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="Also write the run's LOS and shadow-fading maps as CSV.",
    )
    return parser


def build_maps_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmwave-tracksim make-maps",
        description="Export correlated and uncorrelated LOS / shadow-fading maps.",
    )
    _add_common_arguments(parser)
    return parser


def parse_args(argv: list[str] | None = None) -> tuple[str, argparse.Namespace]:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "make-maps":
        return "make-maps", build_maps_parser().parse_args(argv[1:])
    if argv and argv[0] == "simulate":
        argv = argv[1:]
    return "simulate", build_simulate_parser().parse_args(argv)


def _format_config_error(exc: ConfigError) -> str:
    lines = ["Invalid config:"]
    lines += [f"  - {violation}" for violation in exc.violations]
    return "\n".join(lines)


def load_simulation_config(args: argparse.Namespace) -> SimulationConfig:
    path = Path(args.config)
    if not path.is_file():
        raise SystemExit(f"Config file not found: {path}")
    try:
        config = load_config(path)
        config = apply_overrides(config, args.override)
    except ConfigError as exc:
        raise SystemExit(_format_config_error(exc)) from exc
    except (OSError, ValueError) as exc:
        raise SystemExit(f"Failed to read config {path}: {exc}") from exc
    if args.seed is not None:
        config = dataclasses.replace(config, rng_seed=args.seed)
    return config


def _report_error(exc: BaseException) -> SystemExit:
    if isinstance(exc, ConfigError):
        return SystemExit(_format_config_error(exc))
    return SystemExit(f"Simulation failed: {exc}")


def _print_result(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2))


def _run_many(
    config: SimulationConfig, out_dir: Path, args: argparse.Namespace
) -> list[dict[str, Any]]:
    if config.rng_seed is None:
        raise SystemExit("--runs needs a seed (config [run] rng_seed or --seed).")
    seeds = [config.rng_seed + offset for offset in range(args.runs)]
    workers = args.workers or min(len(seeds), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                run_to_directory,
                dataclasses.replace(config, rng_seed=seed),
                out_dir / RUN_DIR_TEMPLATE.format(seed=seed),
                include_maps=args.maps,
                verbose=args.verbose,
                quiet=True,
            )
            for seed in seeds
        ]
        return [future.result() for future in futures]


def _handle_simulate(args: argparse.Namespace) -> int:
    if args.runs < 1:
        raise SystemExit("--runs must be at least 1.")
    if args.workers is not None and args.workers < 1:
        raise SystemExit("--workers must be at least 1.")
    config = load_simulation_config(args)
    out_dir = Path(args.out)
    logger = RunLogger(verbose=args.verbose, quiet=args.quiet)
    try:
        if args.runs == 1:
            result = run_to_directory(
                config,
                out_dir,
                include_maps=args.maps,
                verbose=args.verbose,
                quiet=args.quiet,
            )
            _print_result({"status": "ok", **result})
            return 0
        logger.info(f"Running {args.runs} seeds into {out_dir}.")
        results = _run_many(config, out_dir, args)
    except SIMULATION_ERRORS as exc:
        raise _report_error(exc) from exc
    _print_result({"status": "ok", "runs": results})
    return 0


def _handle_make_maps(args: argparse.Namespace) -> int:
    config = load_simulation_config(args)
    out_dir = Path(args.out)
    logger = RunLogger(verbose=args.verbose, quiet=args.quiet)
    try:
        written = make_maps(config, out_dir, logger=logger)
    except SIMULATION_ERRORS as exc:
        raise _report_error(exc) from exc
    _print_result(
        {
            "status": "ok",
            "seed": config.rng_seed,
            "out_dir": str(out_dir),
            "files": sorted(written),
        }
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    mode, args = parse_args(argv)
    if mode == "make-maps":
        return _handle_make_maps(args)
    if mode == "simulate":
        return _handle_simulate(args)
    raise SystemExit(f"Unknown command: {mode}")


if __name__ == "__main__":
    raise SystemExit(main())
