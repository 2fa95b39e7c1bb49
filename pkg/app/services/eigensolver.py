# app/services/eigensolver.py

"""
Block preconditioned inverse iteration for A e = lambda M e.

Each step forms the correction D = B(A E - M E Lambda), removes gradient
content and (for periodic k) the constant fields, M-orthonormalizes the
search space spanned by E - D (plain), E and D (gradient) or E, D and the
previous block (lobpcg) by generalized Householder reflections and keeps
the p+q smallest Ritz pairs. Only the first p columns decide convergence;
the trailing q columns are throw-away vectors that speed up the wanted ones.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from app.core.exceptions import ContractViolation, DimensionMismatchError
from app.models.band_models import SolverOptions, SubspaceMode
from app.services.corelinalg import generalized_householder_qr, hermitian_eig_small, m_orthonormality_defect
from app.services.mesh import BlochParameter, GridLevel, X_EDGE, Y_EDGE

logger = logging.getLogger(__name__)

Preconditioner = Callable[[np.ndarray], np.ndarray]
Projector = Callable[[np.ndarray], np.ndarray]
IterationCallback = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]

# Ritz values below this multiple of max(diag A)/min(diag M) are null-space modes
NULL_RELATIVE = 1e-8

# Search directions shrinking below this fraction of their norm after
# orthogonalization against the current block carry no new information
DIRECTION_TOLERANCE = 1e-12


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    ritz_values: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one eigensolve; `block` keeps all p+q columns for warm starts"""

    eigenvalues: np.ndarray
    basis: np.ndarray
    iterations: int
    residuals: np.ndarray
    converged: bool
    block: np.ndarray
    block_values: np.ndarray
    history: List[IterationRecord] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0


# ===== DEFLATION =====


def deflation_vectors(level: GridLevel, k: BlochParameter) -> np.ndarray:
    """
    The constant fields (1, 0) and (0, 1) for periodic k, M-orthonormal.

    Their M-norm is the cell area independently of the permittivity; for
    non-periodic k the result has no columns.
    """
    if not k.is_periodic:
        return np.zeros((level.num_edges, 0), dtype=complex)

    V = np.zeros((level.num_edges, 2), dtype=complex)
    nm = level.num_nodes
    scale = 1.0 / np.sqrt(level.cell.area)
    V[X_EDGE * nm : (X_EDGE + 1) * nm, 0] = level.h1 * scale
    V[Y_EDGE * nm : (Y_EDGE + 1) * nm, 1] = level.h2 * scale
    return V


def deflate(M, V: np.ndarray, U: np.ndarray) -> np.ndarray:
    """M-orthogonal projection of U onto the complement of span(V)"""
    if V.shape[1] == 0:
        return U
    return U - V @ (V.conj().T @ (M @ U))


# ===== RITZ =====


def null_threshold(A, M) -> float:
    a = float(np.max(np.real(A.diagonal())))
    m = float(np.min(np.real(M.diagonal())))
    return NULL_RELATIVE * a / m


def rayleigh_block(A, M, E: np.ndarray) -> np.ndarray:
    """E* A E for an M-orthonormal block E"""
    if E.shape[0] != A.shape[0]:
        raise DimensionMismatchError(f"block has {E.shape[0]} rows, operator is {A.shape}")
    head = E[:, : min(E.shape[1], 4)]
    defect = m_orthonormality_defect(M, head)
    if defect > 1e-8:
        raise ContractViolation(f"block is not M-orthonormal (defect {defect:.3e})")
    return E.conj().T @ (A @ E)


def ritz_step(A, M, Q: np.ndarray, keep: int, threshold: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    The `keep` smallest Ritz pairs of (A, M) on span(Q).

    Ritz values at or below `threshold` are skipped while enough others remain.
    """
    U, d = hermitian_eig_small(rayleigh_block(A, M, Q))
    selected = np.flatnonzero(d > threshold)
    if selected.size < keep:
        selected = np.arange(min(keep, d.size))
    else:
        selected = selected[:keep]
    return Q @ U[:, selected], d[selected]


def residual_block(A, M, E: np.ndarray, values: np.ndarray) -> np.ndarray:
    return A @ E - (M @ E) * values[None, :]


# ===== ITERATION =====


def _orthogonal_directions(M, E: np.ndarray, U: np.ndarray) -> np.ndarray:
    """
    Columns of U made M-orthogonal to the M-orthonormal block E and scaled
    to unit M-norm. Columns that vanish relative to their input are dropped.
    """
    if U.shape[1] == 0:
        return U
    before = np.sqrt(np.maximum(np.real(np.einsum("ij,ij->j", U.conj(), M @ U)), 0.0))
    for _ in range(2):
        U = U - E @ (E.conj().T @ (M @ U))
    after = np.sqrt(np.maximum(np.real(np.einsum("ij,ij->j", U.conj(), M @ U)), 0.0))
    keep = after > DIRECTION_TOLERANCE * np.maximum(before, np.finfo(float).tiny)
    return U[:, keep] / after[keep]


def subspace_step(
    A,
    M,
    B: Preconditioner,
    projector: Projector,
    E: np.ndarray,
    values: np.ndarray,
    previous: Optional[np.ndarray],
    opts: SolverOptions,
    deflation: Optional[np.ndarray] = None,
    threshold: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One preconditioned update followed by the Ritz step on the chosen subspace.

    The gradient span [E - D, E] is built as [E, D] and the lobpcg span
    [E - D, E, E_prev] as [E, D, E_prev], with D the projected correction
    B(A E - M E Lambda). D and E_prev enter M-orthogonalized against E and
    normalized, so the factorization stays well conditioned when D is tiny.
    """
    V = deflation if deflation is not None else np.zeros((E.shape[0], 0), dtype=complex)
    D = deflate(M, V, projector(B(residual_block(A, M, E, values))))

    mode = SubspaceMode(opts.subspace)
    if mode == SubspaceMode.PLAIN:
        candidates = [E - D]
    else:
        candidates = [E, _orthogonal_directions(M, E, D)]
        if mode == SubspaceMode.LOBPCG and previous is not None:
            candidates.append(_orthogonal_directions(M, E, previous))

    Q, _ = generalized_householder_qr(M, candidates)
    if opts.reproject:
        Q = deflate(M, V, projector(Q))
        Q, _ = generalized_householder_qr(M, Q)

    return ritz_step(A, M, Q, E.shape[1], threshold)


def pinvit_solve(
    A,
    M,
    L,
    B: Preconditioner,
    projector: Projector,
    E0: np.ndarray,
    opts: SolverOptions,
    deflation: Optional[np.ndarray] = None,
    callback: Optional[IterationCallback] = None,
) -> SolveResult:
    """
    Iterate until every wanted column has defect ||A e - lambda M e||_2 <= tol.

    E0 must hold p+q M-orthonormal, gradient-free columns. Hitting max_iter
    returns the last iterate with converged=False.
    """
    p, s = opts.p, opts.block_size
    if E0.ndim != 2 or E0.shape[0] != A.shape[0] or E0.shape[1] != s:
        raise DimensionMismatchError(f"initial block must be {A.shape[0]}x{s}, got {E0.shape}")

    threshold = null_threshold(A, M)
    E, values = ritz_step(A, M, np.asarray(E0, dtype=complex), s, threshold)
    previous: Optional[np.ndarray] = None
    history: List[IterationRecord] = []
    iterations = 0

    while True:
        defects = np.linalg.norm(residual_block(A, M, E, values), axis=0)
        history.append(IterationRecord(iterations, values.copy(), defects.copy()))
        if callback is not None:
            callback(iterations, E, values, defects)
        logger.debug(
            f"iteration {iterations}: max wanted defect {np.max(defects[:p]):.3e}, "
            f"lambda_1={values[0]:.6g}, lambda_p={values[p - 1]:.6g}"
        )

        converged = bool(np.all(defects[:p] <= opts.tol))
        if converged or iterations >= opts.max_iter:
            break

        E_next, values = subspace_step(
            A, M, B, projector, E, values, previous, opts, deflation=deflation, threshold=threshold
        )
        previous, E = E, E_next
        iterations += 1

    if L is not None and logger.isEnabledFor(logging.DEBUG):
        gradient_content = float(np.max(np.abs(L.conj().T @ (M @ E)))) if E.size else 0.0
        logger.debug(f"null-space residual max|L* M E| = {gradient_content:.3e}")

    if converged:
        logger.info(
            f"PINVIT converged in {iterations} iterations, "
            f"lambda in [{values[0]:.6g}, {values[p - 1]:.6g}]"
        )
    else:
        logger.warning(
            f"PINVIT stopped after {iterations} iterations without convergence "
            f"(max defect {np.max(defects[:p]):.3e} > tol {opts.tol:g})"
        )

    return SolveResult(
        eigenvalues=values[:p].copy(),
        basis=E[:, :p].copy(),
        iterations=iterations,
        residuals=defects[:p].copy(),
        converged=converged,
        block=E,
        block_values=values,
        history=history,
    )
