# app/services/operators.py

"""
Assembly of the Bloch-periodic edge element operators.

Stiffness A and mass M come from exact element integrals of the bilinear
edge basis on the finest level; coarse operators are formed by Galerkin
products through the prolongations, so coarse levels never sample the
permittivity themselves.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from app.core.exceptions import DimensionMismatchError, InvalidInputError
from app.models.band_models import (
    ConstantPermittivity,
    DiscPermittivity,
    RasterPermittivity,
    TransferKind,
)
from app.services.mesh import X_EDGE, Y_EDGE, BlochParameter, GridLevel

logger = logging.getLogger(__name__)

# Curl of the four local edge functions (bottom, top, left, right) times h1*h2
_LOCAL_CURL = np.array([-1.0, 1.0, 1.0, -1.0])

# 1D mass matrix of two linear ramps on [0, 1]
_RAMP_MASS = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])

# Offsets and weights of fine sub-edges for one coarse edge:
# (along-edge offsets, across-edge offsets with weights)
_EDGE_ALONG = (0, 1)
_EDGE_ACROSS = ((0, 0.25), (1, 0.5), (2, 0.25))


@dataclass(frozen=True)
class SparseHermitianOperator:
    """Assembled sparse operator together with its definiteness flags"""

    matrix: sp.csr_matrix
    positive_definite: bool = False
    positive_semidefinite: bool = True

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, x):
        return self.matrix @ x

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def max_abs(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def hermitian_defect(self) -> float:
        """Largest entrywise |A_ij - conj(A_ji)|"""
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def _as_csr(op: Union[SparseHermitianOperator, sp.spmatrix]) -> sp.csr_matrix:
    if isinstance(op, SparseHermitianOperator):
        return op.matrix
    return sp.csr_matrix(op)


# ===== PERMITTIVITY =====


def sample_permittivity(level: GridLevel, eps) -> np.ndarray:
    """One permittivity value per cell of the level, in cell id order"""
    if isinstance(eps, ConstantPermittivity):
        values = np.full(level.num_cells, float(eps.value))

    elif isinstance(eps, DiscPermittivity):
        x1, x2 = level.cell_midpoints()
        inside = np.hypot(x1 - eps.center[0], x2 - eps.center[1]) <= eps.radius
        values = np.where(inside, float(eps.eps_inside), float(eps.eps_outside))

    elif isinstance(eps, RasterPermittivity):
        if (eps.n, eps.m) != (level.n, level.m):
            raise DimensionMismatchError(
                f"raster is {eps.n}x{eps.m} but the level has {level.n}x{level.m} cells"
            )
        values = np.asarray(eps.values, dtype=float)

    else:
        raise InvalidInputError(f"unsupported permittivity description: {type(eps).__name__}")

    if not np.all(values > 0):
        raise InvalidInputError("permittivity must be strictly positive")
    return values


# ===== EDGE OPERATORS =====


def _cell_edges(level: GridLevel, k: BlochParameter) -> Tuple[np.ndarray, np.ndarray]:
    """Edge ids and phases of the local edges (bottom, top, left, right) of every cell"""
    c2, c1 = np.divmod(np.arange(level.num_cells), level.n)
    ids = np.empty((level.num_cells, 4), dtype=np.int64)
    phases = np.empty((level.num_cells, 4), dtype=complex)
    ids[:, 0], phases[:, 0] = level.wrap_edges(k, X_EDGE, c1, c2 - 1)
    ids[:, 1], phases[:, 1] = level.wrap_edges(k, X_EDGE, c1, c2)
    ids[:, 2], phases[:, 2] = level.wrap_edges(k, Y_EDGE, c1 - 1, c2)
    ids[:, 3], phases[:, 3] = level.wrap_edges(k, Y_EDGE, c1, c2)
    return ids, phases


def _scatter(level: GridLevel, ids: np.ndarray, phases: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-cell 4x4 blocks into a global matrix, applying conj(phase_i) K_ij phase_j"""
    values = np.conj(phases)[:, :, None] * local * phases[:, None, :]
    rows = np.broadcast_to(ids[:, :, None], values.shape).ravel()
    cols = np.broadcast_to(ids[:, None, :], values.shape).ravel()
    size = level.num_edges
    matrix = sp.coo_matrix((values.ravel(), (rows, cols)), shape=(size, size)).tocsr()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return matrix


def assemble_edge_operators(
    level: GridLevel, eps: np.ndarray, k: BlochParameter
) -> Tuple[SparseHermitianOperator, SparseHermitianOperator]:
    """Stiffness and mass matrices of the Bloch-periodic bilinear edge basis"""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (level.num_cells,):
        raise DimensionMismatchError(
            f"expected {level.num_cells} permittivity samples, got shape {eps.shape}"
        )
    if not np.all(eps > 0):
        raise InvalidInputError("permittivity must be strictly positive")

    h1, h2 = level.h1, level.h2
    ids, phases = _cell_edges(level, k)

    # curl is constant on the cell, so a(b_i, b_j) = curl_i curl_j h1 h2 / eps
    stiffness_local = np.outer(_LOCAL_CURL, _LOCAL_CURL)[None, :, :] / (eps[:, None, None] * h1 * h2)

    mass_block = np.zeros((4, 4))
    mass_block[:2, :2] = (h2 / h1) * _RAMP_MASS
    mass_block[2:, 2:] = (h1 / h2) * _RAMP_MASS
    mass_local = np.broadcast_to(mass_block, (level.num_cells, 4, 4))

    A = _scatter(level, ids, phases, stiffness_local)
    M = _scatter(level, ids, phases, mass_local)
    logger.debug(f"Assembled edge operators on {level.n}x{level.m}: nnz(A)={A.nnz}, nnz(M)={M.nnz}")
    return (
        SparseHermitianOperator(A, positive_definite=False),
        SparseHermitianOperator(M, positive_definite=True),
    )


def node_patches(level: GridLevel, k: BlochParameter) -> Tuple[np.ndarray, np.ndarray]:
    """
    The four edges incident to every node and the node's gradient on them.

    Edge order per node: x-edge ending at the node, x-edge starting there,
    y-edge ending at the node, y-edge starting there. The gradient entries
    are +1 on ending edges and -conj(phase) on (wrap-resolved) starting edges.
    """
    i1, i2 = level.node_coords()
    ids = np.empty((level.num_nodes, 4), dtype=np.int64)
    grad = np.ones((level.num_nodes, 4), dtype=complex)

    ids[:, 0] = level.edge_id(X_EDGE, i1, i2)
    ids[:, 1], x_phase = level.wrap_edges(k, X_EDGE, i1 + 1, i2)
    ids[:, 2] = level.edge_id(Y_EDGE, i1, i2)
    ids[:, 3], y_phase = level.wrap_edges(k, Y_EDGE, i1, i2 + 1)
    grad[:, 1] = -np.conj(x_phase)
    grad[:, 3] = -np.conj(y_phase)
    return ids, grad


def assemble_lifting(level: GridLevel, k: BlochParameter) -> sp.csr_matrix:
    """Map nodal coefficients to the edge coefficients of their gradients"""
    ids, grad = node_patches(level, k)
    cols = np.repeat(np.arange(level.num_nodes), 4)
    return sp.csr_matrix(
        (grad.ravel(), (ids.ravel(), cols)), shape=(level.num_edges, level.num_nodes)
    )


def assemble_nodal(level: GridLevel, k: BlochParameter, M, L) -> SparseHermitianOperator:
    """P = L* M L, the Bloch-periodic nodal Laplacian in the mass inner product"""
    M = _as_csr(M)
    L = sp.csr_matrix(L)
    if M.shape != (level.num_edges, level.num_edges) or L.shape != (level.num_edges, level.num_nodes):
        raise DimensionMismatchError(
            f"mass {M.shape} and lifting {L.shape} do not fit level {level.n}x{level.m}"
        )
    P = (L.conj().T @ M @ L).tocsr()
    return SparseHermitianOperator(P, positive_definite=not k.is_periodic)


# ===== TRANSFER =====


def _edge_prolongation(coarse: GridLevel, fine: GridLevel, k: BlochParameter) -> sp.csr_matrix:
    I2, I1 = np.divmod(np.arange(coarse.num_nodes), coarse.n)
    rows, cols, vals = [], [], []

    for comp in (X_EDGE, Y_EDGE):
        coarse_ids = coarse.edge_id(comp, I1, I2)
        for along in _EDGE_ALONG:
            for across, weight in _EDGE_ACROSS:
                if comp == X_EDGE:
                    j1, j2 = 2 * I1 + along, 2 * I2 + across
                else:
                    j1, j2 = 2 * I1 + across, 2 * I2 + along
                fine_ids, phase = fine.wrap_edges(k, comp, j1, j2)
                rows.append(fine_ids)
                cols.append(coarse_ids)
                vals.append(weight * np.conj(phase))

    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.num_edges, coarse.num_edges),
    )


def _nodal_prolongation(coarse: GridLevel, fine: GridLevel, k: BlochParameter) -> sp.csr_matrix:
    I1, I2 = coarse.node_coords()
    coarse_ids = coarse.node_id(I1, I2)
    rows, cols, vals = [], [], []

    for d1 in (-1, 0, 1):
        for d2 in (-1, 0, 1):
            weight = (1.0 - abs(d1) / 2.0) * (1.0 - abs(d2) / 2.0)
            fine_ids, phase = fine.wrap_nodes(k, 2 * I1 + 1 + d1, 2 * I2 + 1 + d2)
            rows.append(fine_ids)
            cols.append(coarse_ids)
            vals.append(weight * np.conj(phase))

    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.num_nodes, coarse.num_nodes),
    )


def assemble_prolongation(
    coarse: GridLevel, fine: GridLevel, k: BlochParameter, kind: TransferKind = TransferKind.EDGE
) -> sp.csr_matrix:
    """Natural embedding of the coarse edge (or nodal) space into the fine one"""
    if fine.n != 2 * coarse.n or fine.m != 2 * coarse.m or fine.cell != coarse.cell:
        raise InvalidInputError(
            f"{fine.n}x{fine.m} is not the bisection refinement of {coarse.n}x{coarse.m}"
        )
    if TransferKind(kind) == TransferKind.EDGE:
        return _edge_prolongation(coarse, fine, k)
    return _nodal_prolongation(coarse, fine, k)


def galerkin_coarsen(A_fine, prolongation) -> SparseHermitianOperator:
    """Coarse operator P* A P"""
    A = _as_csr(A_fine)
    P = sp.csr_matrix(prolongation)
    if A.shape[0] != A.shape[1] or A.shape[1] != P.shape[0]:
        raise DimensionMismatchError(f"cannot coarsen operator {A.shape} with prolongation {P.shape}")
    coarse = (P.conj().T @ A @ P).tocsr()
    coarse.sum_duplicates()
    if isinstance(A_fine, SparseHermitianOperator):
        return SparseHermitianOperator(
            coarse,
            positive_definite=A_fine.positive_definite,
            positive_semidefinite=A_fine.positive_semidefinite,
        )
    return SparseHermitianOperator(coarse)


# ===== HIERARCHY =====


@dataclass(frozen=True)
class LevelOperators:
    """Operators of one mesh level for a fixed Bloch parameter"""

    level: GridLevel
    A: SparseHermitianOperator
    M: SparseHermitianOperator
    L: sp.csr_matrix
    P: SparseHermitianOperator
    # Embeddings from the next-coarser level; None on the coarsest level
    edge_prolongation: Optional[sp.csr_matrix] = None
    nodal_prolongation: Optional[sp.csr_matrix] = None


def assemble_hierarchy_operators(hierarchy, eps: np.ndarray, k: BlochParameter) -> List[LevelOperators]:
    """
    Assemble A, M, L and P on the finest level and coarsen A, M and P by
    Galerkin products down to level 0. Returned coarse to fine.
    """
    levels = hierarchy.levels
    finest = levels[-1]
    A, M = assemble_edge_operators(finest, eps, k)
    L = assemble_lifting(finest, k)
    P = assemble_nodal(finest, k, M, L)

    result: List[LevelOperators] = []
    for index in range(len(levels) - 1, -1, -1):
        level = levels[index]
        if index > 0:
            coarse = levels[index - 1]
            edge_prolongation = assemble_prolongation(coarse, level, k, TransferKind.EDGE)
            nodal_prolongation = assemble_prolongation(coarse, level, k, TransferKind.NODAL)
        else:
            edge_prolongation = nodal_prolongation = None

        result.append(LevelOperators(level, A, M, L, P, edge_prolongation, nodal_prolongation))

        if index > 0:
            A = galerkin_coarsen(A, edge_prolongation)
            M = galerkin_coarsen(M, edge_prolongation)
            P = galerkin_coarsen(P, nodal_prolongation)
            L = assemble_lifting(levels[index - 1], k)

    result.reverse()
    return result
