# app/cli.py

"""
Command-line front end.

    python -m app [config] [--mode scan|single|selftest] [--out PATH]

Exit codes: 0 success, 1 configuration or input error, 2 single-mode solve
did not converge, 3 self-test failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import BlochBandsError, ConfigError, InvalidInputError
from app.core.logging import setup_logging
from app.models.band_models import RunConfig, RunMode, permittivity_from_text, permittivity_to_text
from app.services.band_output import emit_bands, write_history, write_single
from app.services.mesh import BlochParameter, UnitCell, build_hierarchy
from app.services.operators import sample_permittivity
from app.services.problem import build_problem, cold_start_basis
from app.services.scan import BlochGrid, nested_iteration_first, run_band_scan
from app.services.selftest import selftest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_SELFTEST = 3

CONFIG_KEYS = tuple(RunConfig.model_fields)


# ===== CONFIG PARSING =====


def _split_lines(text: str) -> List[Tuple[int, str, str]]:
    entries = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=number)
        if not value:
            raise ConfigError(f"missing value for '{key}'", line=number)
        entries.append((number, key.lower(), value))
    return entries


def parse_config(
    text: str, overrides: Optional[Dict[str, object]] = None, base_dir: Optional[Path] = None
) -> RunConfig:
    """
    Parse `key = value` lines ('#' starts a comment) into a validated RunConfig.

    Overrides replace file values before validation. Every error carries the
    line that caused it when there is one.
    """
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}

    for number, key, value in _split_lines(text):
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key '{key}'", line=number)
        if key in values:
            raise ConfigError(f"duplicate key '{key}' (first set on line {lines[key]})", line=number)
        if key == "permittivity":
            try:
                values[key] = permittivity_from_text(value, base_dir=base_dir)
            except InvalidInputError as e:
                raise ConfigError(f"permittivity: {e}", line=number) from e
            except OSError as e:
                raise ConfigError(f"permittivity: cannot read raster file: {e}", line=number) from e
        else:
            values[key] = value
        lines[key] = number

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)

    try:
        return RunConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        loc = error.get("loc") or ()
        key = str(loc[0]) if loc else None
        message = f"{key}: {error['msg']}" if key else error["msg"]
        raise ConfigError(message, line=lines.get(key) if key else None) from e


def apply_environment(config: RunConfig) -> RunConfig:
    """BLOCHBANDS_THREADS overrides the threads key"""
    if settings.THREADS is None:
        return config
    return RunConfig(**{**config.model_dump(), "threads": settings.THREADS})


def format_config(config: RunConfig) -> str:
    lines = []
    for key in CONFIG_KEYS:
        value = getattr(config, key)
        if key == "permittivity":
            value = permittivity_to_text(value)
        elif hasattr(value, "value"):
            value = value.value
        lines.append(f"{key} = {value}")
    return "\n".join(lines)


# ===== RUNS =====


def _setup(config: RunConfig):
    cell = UnitCell(config.a, config.b)
    hierarchy = build_hierarchy(cell, config.n0, config.m0, config.levels)
    eps = sample_permittivity(hierarchy.finest, config.permittivity)
    return cell, hierarchy, eps


def run_single(config: RunConfig) -> int:
    cell, hierarchy, eps = _setup(config)
    opts = config.solver_options()
    k = BlochParameter(config.k1, config.k2, cell)

    if config.warm_start:
        result = nested_iteration_first(hierarchy, eps, k, opts)
    else:
        problem = build_problem(hierarchy, eps, k, opts)
        result = problem.solve(cold_start_basis(problem, opts.block_size, np.random.default_rng(config.seed)))

    write_single(result, config.k1, config.k2, config.output)
    write_history(result, config.output)
    print("eigenvalues: " + " ".join("%.12g" % v for v in result.eigenvalues))
    print(f"iterations: {result.iterations}, converged: {result.converged}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def run_scan(config: RunConfig) -> int:
    cell, hierarchy, eps = _setup(config)
    surface = run_band_scan(
        hierarchy,
        eps,
        BlochGrid(config.kappa, cell),
        config.solver_options(),
        warm_start=config.warm_start,
        depth=config.extrapolation_depth,
        threads=config.threads,
        seed=config.seed,
    )
    emit_bands(surface, config.output)
    for gap in surface.band_gaps():
        print(f"band gap between bands {gap.band} and {gap.band + 1}: [{gap.lower:.6g}, {gap.upper:.6g}]")
    unconverged = int((~surface.converged).sum())
    if unconverged:
        logger.warning(f"{unconverged} scan points did not converge")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blochbands", description="Photonic band structures of 2D periodic dielectrics")
    parser.add_argument("config", nargs="?", help="run configuration file (key = value lines)")
    parser.add_argument("--mode", choices=[m.value for m in RunMode], help="override the mode key")
    parser.add_argument("--out", help="override the output key")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()

    try:
        text, base_dir = "", None
        if args.config:
            path = Path(args.config)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigError(f"cannot read config file {path}: {e}") from e
            base_dir = path.parent
        config = parse_config(text, overrides={"mode": args.mode, "output": args.out}, base_dir=base_dir)
        config = apply_environment(config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    print(format_config(config))
    sys.stdout.flush()

    try:
        if config.mode == RunMode.SELFTEST:
            return EXIT_OK if selftest().passed else EXIT_SELFTEST
        if config.mode == RunMode.SINGLE:
            return run_single(config)
        return run_scan(config)
    except InvalidInputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BlochBandsError as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
