# app/services/band_output.py

"""
CSV files of a band scan: one row per Bloch parameter plus an iteration map,
and the per-iteration residual history of single solves.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from app.core.exceptions import InvalidInputError
from app.services.eigensolver import SolveResult
from app.services.scan import BandSurface

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _fmt(value: float) -> str:
    return "%.12g" % value


def iters_path(path: PathLike) -> Path:
    return Path(f"{path}.iters.csv")


def history_path(path: PathLike) -> Path:
    return Path(f"{path}.history.csv")


def band_header(p: int) -> List[str]:
    return ["i", "j", "k1", "k2", "iters", "converged"] + [f"lambda_{n}" for n in range(1, p + 1)]


def _open_for_writing(path: Path):
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="", encoding="utf-8")
    except OSError as e:
        raise InvalidInputError(f"cannot write {path}: {e}") from e


def emit_bands(surface: BandSurface, path: PathLike) -> Path:
    """Write the band table and its companion iteration map; returns the table path"""
    if not surface.complete:
        raise InvalidInputError("band surface has unsolved points")
    path = Path(path)

    with _open_for_writing(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(band_header(surface.p))
        for i, j in surface.grid.indices():
            k = surface.grid.point(i, j)
            writer.writerow(
                [i, j, _fmt(k.k1), _fmt(k.k2), int(surface.iterations[i, j]), int(surface.converged[i, j])]
                + [_fmt(v) for v in surface.eigenvalues[i, j]]
            )

    kappa = surface.grid.kappa
    with _open_for_writing(iters_path(path)) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["j\\i"] + list(range(kappa)))
        for j in range(kappa):
            writer.writerow([j] + [int(surface.iterations[i, j]) for i in range(kappa)])

    logger.info(f"Wrote {kappa * kappa} band rows to {path}")
    return path


def read_bands(path: PathLike) -> List[Dict[str, object]]:
    """Rows of a band table with numeric fields parsed"""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            lambdas = [float(row[key]) for key in row if key.startswith("lambda_")]
            rows.append(
                {
                    "i": int(row["i"]),
                    "j": int(row["j"]),
                    "k1": float(row["k1"]),
                    "k2": float(row["k2"]),
                    "iters": int(row["iters"]),
                    "converged": row["converged"] == "1",
                    "eigenvalues": np.array(lambdas),
                }
            )
    return rows


def write_single(result: SolveResult, k1: float, k2: float, path: PathLike) -> Path:
    """Single-parameter solve in the band table layout (one row, i = j = 0)"""
    path = Path(path)
    with _open_for_writing(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(band_header(len(result.eigenvalues)))
        writer.writerow(
            [0, 0, _fmt(k1), _fmt(k2), result.iterations, int(result.converged)]
            + [_fmt(v) for v in result.eigenvalues]
        )
    return path


def write_history(result: SolveResult, path: PathLike) -> Path:
    """Ritz value and defect of every column at every iteration"""
    path = history_path(path)
    with _open_for_writing(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["iteration", "column", "ritz_value", "residual"])
        for record in result.history:
            for column, (value, residual) in enumerate(zip(record.ritz_values, record.residuals), start=1):
                writer.writerow([record.iteration, column, _fmt(value), _fmt(residual)])
    return path
