# app/services/scan.py

"""
Band structure over a kappa x kappa grid of Bloch parameters.

The first parameter is solved by nested iteration from a dense coarse
solve. Every other parameter starts from the Ritz vectors of the span of up
to three neighbouring solutions: along row 0 first, then up columns 0-2,
then along every remaining row. Rows are independent once their first
three points exist and run on a thread pool.
"""

import logging
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import InvalidInputError
from app.models.band_models import SolverOptions
from app.services.corelinalg import dense_generalized_eig, generalized_householder_qr
from app.services.eigensolver import SolveResult, null_threshold, ritz_step
from app.services.mesh import BlochParameter, GridHierarchy, UnitCell
from app.services.problem import BlochProblem, build_problem, cold_start_basis

logger = logging.getLogger(__name__)

Point = Tuple[int, int]

# Non-converged solutions above this multiple of tol do not seed neighbours
SOURCE_RESIDUAL_FACTOR = 10.0


# ===== GRID AND SCHEDULE =====


@dataclass(frozen=True)
class BlochGrid:
    kappa: int
    cell: UnitCell = field(default_factory=UnitCell)

    def __post_init__(self):
        if self.kappa < 2:
            raise InvalidInputError(f"kappa must be at least 2, got {self.kappa}")

    def point(self, i: int, j: int) -> BlochParameter:
        span = self.kappa - 1
        k1 = np.pi / self.cell.a * (2.0 * i / span - 1.0)
        k2 = np.pi / self.cell.b * (2.0 * j / span - 1.0)
        return BlochParameter(k1, k2, self.cell)

    def __len__(self) -> int:
        return self.kappa * self.kappa

    def indices(self) -> Iterator[Point]:
        """All (i, j) in output order: j-major, then i"""
        for j in range(self.kappa):
            for i in range(self.kappa):
                yield i, j


def extrapolation_sources(i: int, j: int, depth: int = 3) -> List[Point]:
    """Neighbours whose solutions seed point (i, j), farthest first"""
    if not 1 <= depth <= 3:
        raise InvalidInputError(f"extrapolation depth must be 1..3, got {depth}")
    if i < 0 or j < 0:
        raise InvalidInputError(f"grid indices must be non-negative, got ({i}, {j})")

    if (i, j) == (0, 0):
        sources: List[Point] = []
    elif j == 0:
        sources = [(s, 0) for s in range(max(0, i - 3), i)]
    elif i <= 2:
        sources = [(i, t) for t in range(max(0, j - 3), j)]
    else:
        sources = [(s, j) for s in range(i - 3, i)]
    return sources[-depth:] if sources else sources


@dataclass(frozen=True)
class ScheduleEntry:
    i: int
    j: int
    stage: str
    sources: Tuple[Point, ...]


def scan_schedule(kappa: int, depth: int = 3) -> List[ScheduleEntry]:
    """Execution order of a scan: row 0, then columns 0-2, then the remaining rows"""
    if kappa < 2:
        raise InvalidInputError(f"kappa must be at least 2, got {kappa}")
    entries = [ScheduleEntry(i, 0, "row0", tuple(extrapolation_sources(i, 0, depth))) for i in range(kappa)]
    for i in range(min(3, kappa)):
        for j in range(1, kappa):
            entries.append(ScheduleEntry(i, j, "columns", tuple(extrapolation_sources(i, j, depth))))
    for j in range(1, kappa):
        for i in range(3, kappa):
            entries.append(ScheduleEntry(i, j, "rows", tuple(extrapolation_sources(i, j, depth))))
    return entries


# ===== INITIAL BASES =====


def nested_iteration_first(
    hierarchy: GridHierarchy,
    eps: np.ndarray,
    k0: BlochParameter,
    opts: SolverOptions,
    problem: Optional[BlochProblem] = None,
) -> SolveResult:
    """Dense solve on the coarsest level, then prolongate and polish level by level"""
    if problem is None:
        problem = build_problem(hierarchy, eps, k0, opts)
    s = opts.block_size

    coarse = problem.operators[0]
    values, vectors = dense_generalized_eig(coarse.A, coarse.M)
    threshold = null_threshold(coarse.A, coarse.M)
    selected = np.flatnonzero(values > threshold)[:s]
    if selected.size < s:
        raise InvalidInputError(
            f"coarsest level holds only {selected.size} non-null eigenpairs, {s} requested"
        )
    E = vectors[:, selected].astype(complex)
    logger.info(
        f"Coarse direct solve on {coarse.level.n}x{coarse.level.m}: "
        f"lambda in [{values[selected[0]]:.6g}, {values[selected[-1]]:.6g}]"
    )

    if len(problem.operators) == 1:
        return problem.solve(E)

    result: Optional[SolveResult] = None
    for index in range(1, len(problem.operators)):
        sub = problem.truncated(index)
        E = sub.orthonormalize(problem.operators[index].edge_prolongation @ E)
        result = sub.solve(E)
        E = result.block
        logger.debug(f"Nested iteration level {index}: {result.iterations} iterations")
    return result


def extrapolate_initial(
    previous: Sequence[np.ndarray],
    A,
    M,
    projector: Callable[[np.ndarray], np.ndarray],
    keep: int,
) -> np.ndarray:
    """
    The `keep` smallest Ritz vectors of the current operators on the joint
    span of neighbouring solution blocks.
    """
    if not previous:
        raise InvalidInputError("extrapolation needs at least one previous basis")
    dim = A.shape[0]
    for block in previous:
        if block.shape[0] != dim:
            raise InvalidInputError(f"previous basis has {block.shape[0]} rows, operators have {dim}")

    U = projector(np.hstack(previous))
    Q, _ = generalized_householder_qr(M, U)
    E, _ = ritz_step(A, M, Q, keep, null_threshold(A, M))
    return E


# ===== SURFACE =====


@dataclass(frozen=True)
class BandGap:
    band: int
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass
class BandSurface:
    """Eigenvalues over the Bloch grid, indexed [i, j, band]"""

    grid: BlochGrid
    p: int
    eigenvalues: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    residuals: np.ndarray

    @classmethod
    def empty(cls, grid: BlochGrid, p: int) -> "BandSurface":
        kappa = grid.kappa
        return cls(
            grid=grid,
            p=p,
            eigenvalues=np.full((kappa, kappa, p), np.nan),
            iterations=np.zeros((kappa, kappa), dtype=int),
            converged=np.zeros((kappa, kappa), dtype=bool),
            residuals=np.full((kappa, kappa, p), np.nan),
        )

    def record(self, i: int, j: int, result: SolveResult):
        self.eigenvalues[i, j] = result.eigenvalues
        self.iterations[i, j] = result.iterations
        self.converged[i, j] = result.converged
        self.residuals[i, j] = result.residuals

    @property
    def complete(self) -> bool:
        return not np.isnan(self.eigenvalues).any()

    def band(self, index: int) -> np.ndarray:
        """kappa x kappa values of one band (0-based)"""
        return self.eigenvalues[:, :, index]

    def band_gaps(self) -> List[BandGap]:
        """Complete gaps between adjacent bands over the sampled parameters"""
        gaps = []
        for band in range(self.p - 1):
            lower = float(np.max(self.eigenvalues[:, :, band]))
            upper = float(np.min(self.eigenvalues[:, :, band + 1]))
            if upper > lower:
                gaps.append(BandGap(band + 1, lower, upper))
        return gaps


# ===== SCAN =====


def run_band_scan(
    hierarchy: GridHierarchy,
    eps: np.ndarray,
    grid: BlochGrid,
    opts: SolverOptions,
    warm_start: bool = True,
    depth: int = 3,
    threads: int = 1,
    seed: int = 42,
) -> BandSurface:
    """Solve at every grid point following the extrapolation schedule"""
    if threads < 1:
        raise InvalidInputError(f"threads must be at least 1, got {threads}")
    schedule = scan_schedule(grid.kappa, depth)
    surface = BandSurface.empty(grid, opts.p)
    s = opts.block_size

    # Blocks are dropped once every consumer has started from them
    consumers = Counter(src for entry in schedule for src in entry.sources)
    blocks: Dict[Point, Optional[np.ndarray]] = {}
    lock = threading.Lock()

    logger.info(
        f"Band scan: {len(grid)} points, p={opts.p}, q={opts.q}, "
        f"{'extrapolated' if warm_start else 'cold'} starts, {threads} thread(s)"
    )

    def solve_point(entry: ScheduleEntry):
        k = grid.point(entry.i, entry.j)
        problem = build_problem(hierarchy, eps, k, opts)

        with lock:
            usable = [blocks[src] for src in entry.sources if blocks.get(src) is not None]
            excluded = [src for src in entry.sources if blocks.get(src) is None]

        if excluded:
            logger.warning(f"Point ({entry.i},{entry.j}): skipping unconverged sources {excluded}")

        if not warm_start:
            rng = np.random.default_rng([seed, entry.i, entry.j])
            result = problem.solve(cold_start_basis(problem, s, rng))
        elif usable:
            E0 = extrapolate_initial(usable, problem.A, problem.M, problem.project, s)
            result = problem.solve(E0)
        else:
            result = nested_iteration_first(hierarchy, eps, k, opts, problem=problem)

        keep = result.converged or result.max_residual <= SOURCE_RESIDUAL_FACTOR * opts.tol
        with lock:
            surface.record(entry.i, entry.j, result)
            if consumers[(entry.i, entry.j)] > 0:
                blocks[(entry.i, entry.j)] = result.block if keep else None
            for src in entry.sources:
                consumers[src] -= 1
                if consumers[src] == 0:
                    blocks.pop(src, None)

        logger.info(
            f"Point ({entry.i},{entry.j}) k=({k.k1:.4f},{k.k2:.4f}): "
            f"{result.iterations} iterations, converged={result.converged}"
        )

    def run_group(group: List[ScheduleEntry]):
        for entry in group:
            solve_point(entry)

    stages: Dict[str, Dict[int, List[ScheduleEntry]]] = {"row0": {}, "columns": {}, "rows": {}}
    for entry in schedule:
        key = 0 if entry.stage == "row0" else (entry.i if entry.stage == "columns" else entry.j)
        stages[entry.stage].setdefault(key, []).append(entry)

    run_group(stages["row0"][0])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for stage in ("columns", "rows"):
            for future in [pool.submit(run_group, group) for group in stages[stage].values()]:
                future.result()

    logger.info(
        f"Band scan finished: median {np.median(surface.iterations):.1f} iterations, "
        f"{int(surface.converged.sum())}/{len(grid)} converged"
    )
    return surface
