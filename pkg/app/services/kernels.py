# app/services/kernels.py

"""
Compiled inner loops of the multigrid smoothers.

All kernels work on the raw CSR arrays (indptr, indices, data) of a complex
Hermitian matrix and update the iterate in place. They release the GIL so
independent Bloch-parameter solves can run on threads.
"""

import numba as nb
import numpy as np

# fastmath stays off: sweep results must be bit-reproducible
_numba_setting = {"nogil": True, "cache": True}


@nb.njit(**_numba_setting)
def csr_entry(indptr, indices, data, row, col):
    """A[row, col] of a CSR matrix, zero if the entry is not stored"""
    for ptr in range(indptr[row], indptr[row + 1]):
        if indices[ptr] == col:
            return data[ptr]
    return 0.0j


@nb.njit(**_numba_setting)
def gather_patches(indptr, indices, data, patches):
    """Dense 4x4 restrictions A[patch, patch] for every patch"""
    count = patches.shape[0]
    size = patches.shape[1]
    blocks = np.zeros((count, size, size), dtype=np.complex128)
    for node in range(count):
        for a in range(size):
            for b in range(size):
                blocks[node, a, b] = csr_entry(indptr, indices, data, patches[node, a], patches[node, b])
    return blocks


@nb.njit(**_numba_setting)
def _reflect(w, v):
    """(I - 2 w w*) v for a unit vector w"""
    s = 0.0j
    for a in range(w.shape[0]):
        s += np.conj(w[a]) * v[a]
    out = np.empty_like(v)
    for a in range(w.shape[0]):
        out[a] = v[a] - 2.0 * w[a] * s
    return out


@nb.njit(**_numba_setting)
def _cholesky_solve(C, b):
    """Solve C C* z = b for lower triangular C"""
    size = b.shape[0]
    y = np.empty_like(b)
    for a in range(size):
        s = b[a]
        for c in range(a):
            s -= C[a, c] * y[c]
        y[a] = s / C[a, a]
    z = np.empty_like(b)
    for a in range(size - 1, -1, -1):
        s = y[a]
        for c in range(a + 1, size):
            s -= np.conj(C[c, a]) * z[c]
        z[a] = s / np.conj(C[a, a])
    return z


@nb.njit(**_numba_setting)
def patch_sweep(indptr, indices, data, patches, reflectors, factors, x, rhs, reverse):
    """
    One overlapping block Gauss-Seidel pass over all node patches.

    Each patch solves its local residual system in the reflected coordinates
    (H K H) z = H r with the stored Cholesky factor, then adds H z to x.
    """
    count = patches.shape[0]
    size = patches.shape[1]
    r = np.empty(size, dtype=np.complex128)

    for step in range(count):
        node = count - 1 - step if reverse else step
        for a in range(size):
            row = patches[node, a]
            s = rhs[row]
            for ptr in range(indptr[row], indptr[row + 1]):
                s -= data[ptr] * x[indices[ptr]]
            r[a] = s

        w = reflectors[node]
        z = _cholesky_solve(factors[node], _reflect(w, r))
        delta = _reflect(w, z)
        for a in range(size):
            x[patches[node, a]] += delta[a]


@nb.njit(**_numba_setting)
def point_sweep(indptr, indices, data, diag, x, rhs, reverse):
    """One pointwise Gauss-Seidel pass"""
    count = x.shape[0]
    for step in range(count):
        row = count - 1 - step if reverse else step
        s = rhs[row]
        for ptr in range(indptr[row], indptr[row + 1]):
            s -= data[ptr] * x[indices[ptr]]
        x[row] += s / diag[row]
