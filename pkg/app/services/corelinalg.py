# app/services/corelinalg.py

"""
Dense and block kernels in the mass inner product.

The generalized Householder factorization keeps iteration blocks
M-orthonormal without ever forming a Gram matrix; small Hermitian
eigenproblems and the dense oracle go through LAPACK (scipy.linalg).
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from app.core.config import settings
from app.core.exceptions import (
    ContractViolation,
    DimensionMismatchError,
    InvalidInputError,
    NotPositiveDefiniteError,
    OracleSizeError,
)
from app.services.operators import SparseHermitianOperator

logger = logging.getLogger(__name__)

# Relative size below which a candidate column counts as linearly dependent
RANK_TOLERANCE = 1e-10


def _csr(M) -> sp.csr_matrix:
    if isinstance(M, SparseHermitianOperator):
        return M.matrix
    if sp.issparse(M):
        return M.tocsr()
    return sp.csr_matrix(np.asarray(M))


def _dense(A) -> np.ndarray:
    if isinstance(A, SparseHermitianOperator):
        return A.toarray()
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A)


def m_inner(M, x: np.ndarray, y: np.ndarray):
    """x* M y for vectors (complex scalar) or blocks (matrix of pairings)"""
    x = np.asarray(x)
    y = np.asarray(y)
    dim = M.shape[0]
    if x.shape[0] != dim or y.shape[0] != dim or x.ndim != y.ndim:
        raise DimensionMismatchError(f"cannot pair {x.shape} and {y.shape} through a {M.shape} matrix")
    My = M @ y
    if x.ndim == 1:
        return complex(np.vdot(x, My))
    return x.conj().T @ My


def m_orthonormality_defect(M, E: np.ndarray) -> float:
    """max |E* M E - I|"""
    G = E.conj().T @ (M @ E)
    return float(np.max(np.abs(G - np.eye(E.shape[1])))) if E.shape[1] else 0.0


# ===== HOUSEHOLDER =====


def apply_m_reflection(v: np.ndarray, Mv: np.ndarray, X: np.ndarray) -> np.ndarray:
    """(I - 2 v v* M / (v* M v)) X, with Mv = M v precomputed"""
    vMv = float(np.real(np.vdot(v, Mv)))
    return X - np.multiply.outer(v, (2.0 / vMv) * (Mv.conj() @ X))


def reference_basis(M, count: int) -> np.ndarray:
    """
    M-orthonormal canonical vectors with disjoint couplings.

    Picks unit vectors greedily by smallest diagonal mass entry, skipping any
    index coupled through M to one already chosen. Falls back to sequential
    M-Gram-Schmidt of canonical vectors when the grid is too small.
    """
    M = _csr(M)
    dim = M.shape[0]
    if count > dim:
        raise InvalidInputError(f"cannot build {count} basis vectors in dimension {dim}")

    diag = M.diagonal().real
    order = np.argsort(diag, kind="stable")
    blocked = np.zeros(dim, dtype=bool)
    chosen: List[int] = []
    for g in order:
        if blocked[g]:
            continue
        chosen.append(int(g))
        blocked[M.indices[M.indptr[g] : M.indptr[g + 1]]] = True
        blocked[g] = True
        if len(chosen) == count:
            break

    P = np.zeros((dim, count), dtype=complex)
    if len(chosen) == count:
        P[chosen, np.arange(count)] = 1.0 / np.sqrt(diag[chosen])
        return P

    logger.debug(f"Only {len(chosen)} disjoint unit vectors available, using M-Gram-Schmidt")
    P[order[:count], np.arange(count)] = 1.0
    for j in range(count):
        for _ in range(2):
            coeffs = P[:, :j].conj().T @ (M @ P[:, j])
            P[:, j] -= P[:, :j] @ coeffs
        P[:, j] /= np.sqrt(np.real(np.vdot(P[:, j], M @ P[:, j])))
    return P


def generalized_householder_qr(
    M,
    candidates: Union[np.ndarray, Sequence[np.ndarray]],
    P_basis: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Factor [candidates] = E R with E M-orthonormal and R upper triangular.

    Reflections Q_i = I - 2 v_i v_i* M / (v_i* M v_i) map the candidate block
    onto the reference basis P; E = Q_1 ... Q_q P. Columns whose remaining
    M-norm drops below RANK_TOLERANCE of their original norm get no
    reflection, which completes E from P instead of failing.
    """
    M = _csr(M)
    if isinstance(candidates, np.ndarray):
        blocks = [candidates]
    else:
        blocks = list(candidates)
    blocks = [b[:, None] if b.ndim == 1 else b for b in blocks]
    W = np.array(np.hstack(blocks), dtype=complex)
    dim, q = W.shape
    if dim != M.shape[0]:
        raise DimensionMismatchError(f"candidates have {dim} rows, mass matrix is {M.shape}")
    if q == 0:
        return W.copy(), np.zeros((0, 0), dtype=complex)

    if P_basis is None:
        P = reference_basis(M, q)
    else:
        if P_basis.shape[0] != dim or P_basis.shape[1] < q:
            raise DimensionMismatchError(
                f"reference basis {P_basis.shape} cannot hold {q} columns of length {dim}"
            )
        P = np.asarray(P_basis[:, :q], dtype=complex)
        head = P[:, : min(q, 4)]
        if m_orthonormality_defect(M, head) > 1e-8:
            raise ContractViolation("reference basis is not M-orthonormal")
    MP = M @ P

    norms = np.sqrt(np.maximum(np.real(np.einsum("ij,ij->j", W.conj(), M @ W)), 0.0))
    R = np.zeros((q, q), dtype=complex)
    reflections: List[Optional[Tuple[np.ndarray, np.ndarray]]] = []
    deficient = 0

    for i in range(q):
        w = W[:, i]
        coeffs = MP[:, : i + 1].conj().T @ w
        R[:i, i] = coeffs[:i]
        w_perp = w - P[:, :i] @ coeffs[:i]
        Mw = M @ w_perp
        norm = float(np.sqrt(max(np.real(np.vdot(w_perp, Mw)), 0.0)))

        if norm <= RANK_TOLERANCE * max(norms[i], np.finfo(float).tiny):
            reflections.append(None)
            deficient += 1
            continue

        c = coeffs[i]
        phase = c / abs(c) if abs(c) > 0 else 1.0
        sigma = -phase * norm
        v = w_perp - sigma * P[:, i]
        Mv = Mw - sigma * MP[:, i]
        R[i, i] = sigma
        reflections.append((v, Mv))

        if i + 1 < q:
            W[:, i + 1 :] = apply_m_reflection(v, Mv, W[:, i + 1 :])

    E = P.copy()
    for reflection in reversed(reflections):
        if reflection is None:
            continue
        E = apply_m_reflection(*reflection, E)

    if deficient:
        logger.debug(f"Householder factorization completed {deficient} of {q} dependent columns")
    return E, R


# ===== SMALL DENSE EIGENPROBLEMS =====


def hermitian_eig_small(H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unitary U and ascending real eigenvalues d with U* H U = diag(d)"""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got {H.shape}")
    if H.size == 0:
        return np.zeros((0, 0), dtype=complex), np.zeros(0)

    scale = float(np.max(np.abs(H)))
    asymmetry = float(np.max(np.abs(H - H.conj().T)))
    if asymmetry > 1e-8 * max(scale, np.finfo(float).tiny):
        raise InvalidInputError(f"matrix is not Hermitian (asymmetry {asymmetry:.3e})")

    d, U = la.eigh(0.5 * (H + H.conj().T))
    return U, d


def dense_generalized_eig(A, M, max_dim: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    All eigenpairs of A e = lambda M e, ascending, with M-orthonormal vectors.

    Dense LAPACK solve; used as test oracle and for coarsest-level solves.
    """
    limit = settings.ORACLE_MAX_DIM if max_dim is None else max_dim
    dim = A.shape[0]
    if dim > limit:
        raise OracleSizeError(f"dense eigensolver limited to dimension {limit}, got {dim}")
    if A.shape != M.shape:
        raise DimensionMismatchError(f"A {A.shape} and M {M.shape} differ in shape")

    A = _dense(A)
    M = _dense(M)
    A = 0.5 * (A + A.conj().T)
    M = 0.5 * (M + M.conj().T)
    try:
        d, V = la.eigh(A, M)
    except la.LinAlgError as e:
        raise NotPositiveDefiniteError(f"mass matrix is not positive definite: {e}") from e
    return d, V
