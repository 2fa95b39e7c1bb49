# app/services/multigrid.py

"""
Geometric multigrid for the regularized edge operator A + mu M and for the
nodal operator P = L* M L used by the gradient projection.

The edge smoother is an overlapping block Gauss-Seidel over node patches.
Every patch holds the four edges touching a node; the node's gradient is
nearly a null vector of the patch, so each block is reflected to put the
gradient on the first axis before it is Cholesky-factorized.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from app.core.exceptions import InvalidInputError, NotPositiveDefiniteError
from app.services import kernels
from app.services.mesh import BlochParameter, GridHierarchy, GridLevel
from app.services.operators import (
    LevelOperators,
    SparseHermitianOperator,
    assemble_hierarchy_operators,
    node_patches,
    sample_permittivity,
)

logger = logging.getLogger(__name__)


def _prepared(matrix) -> sp.csr_matrix:
    """Complex CSR with sorted, summed entries as the kernels expect"""
    if isinstance(matrix, SparseHermitianOperator):
        matrix = matrix.matrix
    csr = sp.csr_matrix(matrix, dtype=np.complex128)
    csr.sum_duplicates()
    csr.sort_indices()
    return csr


def _as_samples(hierarchy: GridHierarchy, eps) -> np.ndarray:
    if isinstance(eps, np.ndarray):
        return eps
    return sample_permittivity(hierarchy.finest, eps)


def _columns(x: np.ndarray):
    """Iterate over the columns of a block (or the single vector) as contiguous copies"""
    if x.ndim == 1:
        yield np.ascontiguousarray(x, dtype=np.complex128)
    else:
        for j in range(x.shape[1]):
            yield np.ascontiguousarray(x[:, j], dtype=np.complex128)


def _stack(columns: List[np.ndarray], like: np.ndarray) -> np.ndarray:
    if like.ndim == 1:
        return columns[0]
    if not columns:
        return np.zeros(like.shape, dtype=complex)
    return np.column_stack(columns)


# ===== PATCH SMOOTHER =====


@dataclass(frozen=True)
class PatchSmoother:
    """Node patches of one level with their reflected Cholesky factors"""

    matrix: sp.csr_matrix
    patches: np.ndarray
    gradients: np.ndarray
    reflectors: np.ndarray
    factors: np.ndarray

    @classmethod
    def build(cls, level: GridLevel, k: BlochParameter, matrix) -> "PatchSmoother":
        matrix = _prepared(matrix)
        patches, grad = node_patches(level, k)
        patches = np.ascontiguousarray(patches, dtype=np.int64)
        gradients = grad / np.linalg.norm(grad, axis=1, keepdims=True)

        # Householder vector mapping g to -e^{i theta} e_1; g[0] is never zero
        reflectors = gradients.copy()
        reflectors[:, 0] += gradients[:, 0] / np.abs(gradients[:, 0])
        reflectors /= np.linalg.norm(reflectors, axis=1, keepdims=True)
        reflectors = np.ascontiguousarray(reflectors, dtype=np.complex128)

        blocks = kernels.gather_patches(matrix.indptr, matrix.indices, matrix.data, patches)
        H = np.eye(4)[None, :, :] - 2.0 * reflectors[:, :, None] * reflectors.conj()[:, None, :]
        transformed = H @ blocks @ H
        transformed = 0.5 * (transformed + np.conj(np.swapaxes(transformed, 1, 2)))
        try:
            factors = np.linalg.cholesky(transformed)
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefiniteError(
                f"patch block on {level.n}x{level.m} is not positive definite: {e}"
            ) from e

        return cls(
            matrix=matrix,
            patches=patches,
            gradients=gradients,
            reflectors=reflectors,
            factors=np.ascontiguousarray(factors, dtype=np.complex128),
        )

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]

    def patch_block(self, node: int) -> np.ndarray:
        """Untransformed restriction of the operator to one patch"""
        ids = self.patches[node]
        return self.matrix[ids][:, ids].toarray()

    def sweep(self, x: np.ndarray, rhs: np.ndarray, sweeps: int, reverse: bool) -> np.ndarray:
        m = self.matrix
        for _ in range(sweeps):
            kernels.patch_sweep(
                m.indptr, m.indices, m.data, self.patches, self.reflectors, self.factors, x, rhs, reverse
            )
        return x


def smooth(
    smoother: PatchSmoother, x: np.ndarray, rhs: np.ndarray, sweeps: int, direction: str = "forward"
) -> np.ndarray:
    """Apply block Gauss-Seidel sweeps in lexicographic ('forward') or reverse ('backward') node order"""
    if direction not in ("forward", "backward"):
        raise InvalidInputError(f"direction must be 'forward' or 'backward', got {direction!r}")
    x = np.array(x, dtype=np.complex128)
    rhs = np.ascontiguousarray(rhs, dtype=np.complex128)
    return smoother.sweep(x, rhs, sweeps, reverse=direction == "backward")


# ===== EDGE MULTIGRID =====


@dataclass(frozen=True)
class EdgeMGLevel:
    level: GridLevel
    matrix: sp.csr_matrix
    smoother: PatchSmoother
    # From the next-coarser level; None on level 0
    prolongation: Optional[sp.csr_matrix]


@dataclass(frozen=True)
class EdgeMGHierarchy:
    """Multigrid data for A + mu M, coarse (index 0) to fine"""

    levels: Sequence[EdgeMGLevel]
    coarse_factor: tuple
    mu: float
    nu1: int = 2
    nu2: int = 2

    @property
    def finest(self) -> EdgeMGLevel:
        return self.levels[-1]

    def truncated(self, finest_index: int) -> "EdgeMGHierarchy":
        return EdgeMGHierarchy(
            levels=tuple(self.levels[: finest_index + 1]),
            coarse_factor=self.coarse_factor,
            mu=self.mu,
            nu1=self.nu1,
            nu2=self.nu2,
        )


def build_edge_mg(
    hierarchy: GridHierarchy,
    eps,
    k: BlochParameter,
    mu: float,
    operators: Optional[List[LevelOperators]] = None,
    nu1: int = 2,
    nu2: int = 2,
) -> EdgeMGHierarchy:
    """Regularized operators, patch smoothers and the factorized coarse operator"""
    if not mu > 0:
        raise InvalidInputError(f"regularization mu must be positive, got {mu}")
    if operators is None:
        operators = assemble_hierarchy_operators(hierarchy, _as_samples(hierarchy, eps), k)

    levels = []
    for ops in operators:
        matrix = _prepared(ops.A.matrix + mu * ops.M.matrix)
        levels.append(
            EdgeMGLevel(
                level=ops.level,
                matrix=matrix,
                smoother=PatchSmoother.build(ops.level, k, matrix),
                prolongation=None if ops.edge_prolongation is None else _prepared(ops.edge_prolongation),
            )
        )

    coarse = levels[0].matrix.toarray()
    try:
        coarse_factor = la.cho_factor(0.5 * (coarse + coarse.conj().T), lower=True)
    except la.LinAlgError as e:
        raise NotPositiveDefiniteError(f"coarse edge operator is not positive definite: {e}") from e

    logger.debug(f"Edge multigrid ready: {len(levels)} levels, mu={mu}, k={k.as_tuple()}")
    return EdgeMGHierarchy(levels=tuple(levels), coarse_factor=coarse_factor, mu=mu, nu1=nu1, nu2=nu2)


def vcycle(
    mg: EdgeMGHierarchy, level: int, x0: np.ndarray, rhs: np.ndarray, nu1: int, nu2: int
) -> np.ndarray:
    """One V-cycle on level `level` starting from x0"""
    if nu1 < 1 or nu2 < 1:
        raise InvalidInputError("smoothing sweep counts must be at least 1")
    rhs = np.ascontiguousarray(rhs, dtype=np.complex128)
    if level == 0:
        return la.cho_solve(mg.coarse_factor, rhs).astype(np.complex128)

    current = mg.levels[level]
    x = np.array(x0, dtype=np.complex128)
    current.smoother.sweep(x, rhs, nu1, reverse=False)

    residual = rhs - current.matrix @ x
    coarse_rhs = current.prolongation.conj().T @ residual
    coarse_rhs = np.ascontiguousarray(coarse_rhs)
    correction = vcycle(mg, level - 1, np.zeros_like(coarse_rhs), coarse_rhs, nu1, nu2)
    x += current.prolongation @ correction

    current.smoother.sweep(x, rhs, nu2, reverse=True)
    return x


def precondition(mg: EdgeMGHierarchy, r: np.ndarray, cycles: int) -> np.ndarray:
    """B r: `cycles` V-cycles for (A + mu M) x = r from x = 0, column by column"""
    if cycles < 1:
        raise InvalidInputError(f"cycle count must be at least 1, got {cycles}")
    r = np.asarray(r)
    top = len(mg.levels) - 1
    out = []
    for rhs in _columns(r):
        x = np.zeros_like(rhs)
        for _ in range(cycles):
            x = vcycle(mg, top, x, rhs, mg.nu1, mg.nu2)
        out.append(x)
    return _stack(out, r)


# ===== NODAL MULTIGRID =====


@dataclass(frozen=True)
class NodalMGLevel:
    level: GridLevel
    matrix: sp.csr_matrix
    diagonal: np.ndarray
    prolongation: Optional[sp.csr_matrix]


@dataclass(frozen=True)
class NodalMGHierarchy:
    """
    Multigrid data for P = L* M L.

    For periodic k the constant vector spans the null space of P on every
    level; the coarse solve then uses the pseudo-inverse and each cycle's
    output has its constant component removed.
    """

    levels: Sequence[NodalMGLevel]
    singular: bool
    coarse_factor: Optional[tuple] = None
    coarse_pinv: Optional[np.ndarray] = None
    nu1: int = 2
    nu2: int = 2

    def truncated(self, finest_index: int) -> "NodalMGHierarchy":
        return NodalMGHierarchy(
            levels=tuple(self.levels[: finest_index + 1]),
            singular=self.singular,
            coarse_factor=self.coarse_factor,
            coarse_pinv=self.coarse_pinv,
            nu1=self.nu1,
            nu2=self.nu2,
        )


def build_nodal_mg(
    hierarchy: GridHierarchy,
    k: BlochParameter,
    operators: Sequence[LevelOperators],
    nu1: int = 2,
    nu2: int = 2,
) -> NodalMGHierarchy:
    """Point Gauss-Seidel multigrid over the per-level nodal operators"""
    if len(operators) != len(hierarchy):
        raise InvalidInputError(f"{len(operators)} operator levels for a {len(hierarchy)}-level hierarchy")

    levels = []
    for ops in operators:
        matrix = _prepared(ops.P)
        diagonal = np.ascontiguousarray(matrix.diagonal(), dtype=np.complex128)
        if np.any(diagonal.real <= 0):
            raise NotPositiveDefiniteError(f"nodal operator on {ops.level.n}x{ops.level.m} has a non-positive diagonal")
        levels.append(
            NodalMGLevel(
                level=ops.level,
                matrix=matrix,
                diagonal=diagonal,
                prolongation=None if ops.nodal_prolongation is None else _prepared(ops.nodal_prolongation),
            )
        )

    coarse = levels[0].matrix.toarray()
    coarse = 0.5 * (coarse + coarse.conj().T)
    singular = k.is_periodic
    if singular:
        return NodalMGHierarchy(
            levels=tuple(levels), singular=True, coarse_pinv=la.pinvh(coarse), nu1=nu1, nu2=nu2
        )
    try:
        coarse_factor = la.cho_factor(coarse, lower=True)
    except la.LinAlgError as e:
        raise NotPositiveDefiniteError(f"coarse nodal operator is not positive definite: {e}") from e
    return NodalMGHierarchy(levels=tuple(levels), singular=False, coarse_factor=coarse_factor, nu1=nu1, nu2=nu2)


def _remove_constant(x: np.ndarray) -> np.ndarray:
    return x - x.mean()


def nodal_vcycle(mg: NodalMGHierarchy, level: int, x0: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    rhs = np.ascontiguousarray(rhs, dtype=np.complex128)
    if level == 0:
        if mg.singular:
            return _remove_constant(mg.coarse_pinv @ rhs).astype(np.complex128)
        return la.cho_solve(mg.coarse_factor, rhs).astype(np.complex128)

    current = mg.levels[level]
    m = current.matrix
    x = np.array(x0, dtype=np.complex128)
    for _ in range(mg.nu1):
        kernels.point_sweep(m.indptr, m.indices, m.data, current.diagonal, x, rhs, False)

    residual = rhs - m @ x
    coarse_rhs = np.ascontiguousarray(current.prolongation.conj().T @ residual)
    x += current.prolongation @ nodal_vcycle(mg, level - 1, np.zeros_like(coarse_rhs), coarse_rhs)

    for _ in range(mg.nu2):
        kernels.point_sweep(m.indptr, m.indices, m.data, current.diagonal, x, rhs, True)
    if mg.singular:
        x = _remove_constant(x)
    return x


def nodal_solve(mg: NodalMGHierarchy, rhs: np.ndarray, cycles: int) -> np.ndarray:
    """`cycles` nodal V-cycles from zero, column by column"""
    rhs = np.asarray(rhs)
    top = len(mg.levels) - 1
    out = []
    for b in _columns(rhs):
        if mg.singular:
            b = _remove_constant(b)
        x = np.zeros_like(b)
        for _ in range(cycles):
            x = nodal_vcycle(mg, top, x, b)
        out.append(x)
    return _stack(out, rhs)


def project_out_gradients(M, L, nodal_mg: NodalMGHierarchy, U: np.ndarray, cycles: int) -> np.ndarray:
    """U - L phi with P phi = L* M U solved approximately by nodal multigrid"""
    if cycles < 1:
        raise InvalidInputError(f"cycle count must be at least 1, got {cycles}")
    if isinstance(M, SparseHermitianOperator):
        M = M.matrix
    U = np.asarray(U, dtype=complex)
    rhs = L.conj().T @ (M @ U)
    phi = nodal_solve(nodal_mg, rhs, cycles)
    return U - L @ phi
