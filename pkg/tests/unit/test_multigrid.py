import numpy as np
import pytest
import scipy.linalg as la

from app.core.exceptions import InvalidInputError
from app.services.mesh import BlochParameter, build_hierarchy
from app.services.multigrid import (
    PatchSmoother,
    build_edge_mg,
    build_nodal_mg,
    nodal_solve,
    precondition,
    project_out_gradients,
    smooth,
    vcycle,
)
from app.services.operators import assemble_edge_operators, assemble_hierarchy_operators


def random_vector(rng, size):
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


@pytest.fixture
def patch_setup(level8, generic_k):
    A, M = assemble_edge_operators(level8, np.ones(level8.num_cells), generic_k)
    mu = 1.0
    smoother = PatchSmoother.build(level8, generic_k, A.matrix + mu * M.matrix)
    return A, M, mu, smoother


def test_patch_gradient_is_null_vector_of_stiffness(patch_setup):
    A, _, _, smoother = patch_setup
    for node in (0, 7, 27, 63):
        ids = smoother.patches[node]
        block = A.matrix[ids][:, ids].toarray()
        assert np.max(np.abs(block @ smoother.gradients[node])) <= 1e-12 * A.max_abs()


def test_patch_has_one_small_eigenvalue(patch_setup):
    _, M, mu, smoother = patch_setup
    for node in (0, 27):
        ids = smoother.patches[node]
        g = smoother.gradients[node]
        mass_value = mu * np.real(np.vdot(g, M.matrix[ids][:, ids].toarray() @ g))
        eigenvalues = la.eigvalsh(smoother.patch_block(node))
        assert eigenvalues[0] == pytest.approx(mass_value, rel=1e-10)
        assert eigenvalues[1] > 10 * eigenvalues[0]


def test_reflected_patch_separates_gradient_direction(patch_setup):
    _, _, _, smoother = patch_setup
    for node in (0, 27):
        w = smoother.reflectors[node]
        H = np.eye(4) - 2 * np.outer(w, w.conj())
        assert np.allclose(H @ H.conj().T, np.eye(4), atol=1e-14)
        assert np.allclose(np.abs(H @ smoother.gradients[node]), [1, 0, 0, 0], atol=1e-14)

        T = H @ smoother.patch_block(node) @ H
        C = smoother.factors[node]
        assert np.allclose(C @ C.conj().T, T, atol=1e-10 * np.max(np.abs(T)))
        # square cells: the gradient axis decouples from the other three
        assert np.max(np.abs(T[0, 1:])) <= 1e-10 * np.max(np.abs(T))


def test_smoother_keeps_exact_solution(patch_setup, rng):
    _, _, _, smoother = patch_setup
    x_exact = random_vector(rng, smoother.matrix.shape[0])
    rhs = smoother.matrix @ x_exact
    x = smooth(smoother, x_exact, rhs, sweeps=2, direction="forward")
    assert np.max(np.abs(x - x_exact)) <= 1e-12 * np.max(np.abs(x_exact))


def test_smoother_decreases_energy(patch_setup, rng):
    _, _, _, smoother = patch_setup
    K = smoother.matrix
    x = random_vector(rng, K.shape[0])
    rhs = np.zeros_like(x)
    energy = np.real(np.vdot(x, K @ x))
    for direction in ("forward", "backward", "forward"):
        x = smooth(smoother, x, rhs, sweeps=1, direction=direction)
        new_energy = np.real(np.vdot(x, K @ x))
        assert new_energy < energy
        energy = new_energy


def test_smooth_rejects_unknown_direction(patch_setup):
    _, _, _, smoother = patch_setup
    x = np.zeros(smoother.matrix.shape[0], dtype=complex)
    with pytest.raises(InvalidInputError):
        smooth(smoother, x, x, 1, direction="sideways")


@pytest.fixture
def edge_mg_32(cell, generic_k):
    hierarchy = build_hierarchy(cell, 4, 4, 3)
    eps = np.ones(hierarchy.finest.num_cells)
    return build_edge_mg(hierarchy, eps, generic_k, mu=1.0)


def test_vcycle_of_zero_is_zero(edge_mg_32):
    size = edge_mg_32.finest.matrix.shape[0]
    x = vcycle(edge_mg_32, len(edge_mg_32.levels) - 1, np.zeros(size), np.zeros(size), 2, 2)
    assert np.all(x == 0)


def test_vcycle_contracts(edge_mg_32, rng):
    K = edge_mg_32.finest.matrix
    rhs = random_vector(rng, K.shape[0])
    top = len(edge_mg_32.levels) - 1
    x = np.zeros_like(rhs)
    norms = [np.linalg.norm(rhs)]
    for _ in range(4):
        x = vcycle(edge_mg_32, top, x, rhs, 2, 2)
        norms.append(np.linalg.norm(rhs - K @ x))
    rate = (norms[-1] / norms[1]) ** (1.0 / 3.0)
    assert rate <= 0.2


def test_precondition_is_linear(edge_mg_32, rng):
    size = edge_mg_32.finest.matrix.shape[0]
    r1, r2 = random_vector(rng, size), random_vector(rng, size)
    combined = precondition(edge_mg_32, r1 + 2.0 * r2, cycles=2)
    separate = precondition(edge_mg_32, r1, cycles=2) + 2.0 * precondition(edge_mg_32, r2, cycles=2)
    assert np.linalg.norm(combined - separate) <= 1e-12 * np.linalg.norm(combined)
    assert np.all(precondition(edge_mg_32, np.zeros(size), cycles=1) == 0)


def test_precondition_handles_blocks(edge_mg_32, rng):
    size = edge_mg_32.finest.matrix.shape[0]
    R = np.column_stack([random_vector(rng, size) for _ in range(3)])
    B = precondition(edge_mg_32, R, cycles=1)
    assert B.shape == R.shape
    assert np.allclose(B[:, 1], precondition(edge_mg_32, R[:, 1], cycles=1))


def test_build_edge_mg_rejects_non_positive_mu(small_hierarchy, generic_k):
    with pytest.raises(InvalidInputError):
        build_edge_mg(small_hierarchy, np.ones(64), generic_k, mu=0.0)


@pytest.fixture
def nodal_32(cell, generic_k):
    hierarchy = build_hierarchy(cell, 4, 4, 3)
    ops = assemble_hierarchy_operators(hierarchy, np.ones(hierarchy.finest.num_cells), generic_k)
    return ops, build_nodal_mg(hierarchy, generic_k, ops)


def test_nodal_mg_is_positive_definite_away_from_zero(nodal_32):
    _, mg = nodal_32
    assert not mg.singular
    assert mg.coarse_factor is not None


def test_nodal_constant_null_vector_at_zero_k(cell):
    k = BlochParameter(0.0, 0.0, cell)
    hierarchy = build_hierarchy(cell, 4, 4, 2)
    ops = assemble_hierarchy_operators(hierarchy, np.ones(hierarchy.finest.num_cells), k)
    mg = build_nodal_mg(hierarchy, k, ops)
    assert mg.singular
    for level in mg.levels:
        ones = np.ones(level.matrix.shape[0])
        assert np.max(np.abs(level.matrix @ ones)) <= 1e-12 * np.max(np.abs(level.matrix.data))


def test_projection_removes_pure_gradient(nodal_32, rng):
    ops, mg = nodal_32
    fine = ops[-1]
    u = fine.L @ random_vector(rng, fine.level.num_nodes)
    out = project_out_gradients(fine.M, fine.L, mg, u, cycles=30)
    assert np.linalg.norm(out) <= 1e-8 * np.linalg.norm(u)


def test_projection_reduces_gradient_content(nodal_32, rng):
    ops, mg = nodal_32
    fine = ops[-1]
    M, L = fine.M.matrix, fine.L
    u = random_vector(rng, fine.level.num_edges)
    out = project_out_gradients(M, L, mg, u, cycles=3)
    before = np.linalg.norm(L.conj().T @ (M @ u))
    after = np.linalg.norm(L.conj().T @ (M @ out))
    assert after <= 1e-2 * before


def test_projection_leaves_divergence_free_fields(nodal_32, rng):
    ops, mg = nodal_32
    fine = ops[-1]
    u = project_out_gradients(fine.M, fine.L, mg, random_vector(rng, fine.level.num_edges), cycles=30)
    again = project_out_gradients(fine.M, fine.L, mg, u, cycles=3)
    assert np.linalg.norm(again - u) <= 1e-8 * np.linalg.norm(u)


def test_nodal_solve_at_zero_k_is_orthogonal_to_constants(cell, rng):
    k = BlochParameter(0.0, 0.0, cell)
    hierarchy = build_hierarchy(cell, 4, 4, 2)
    ops = assemble_hierarchy_operators(hierarchy, np.ones(hierarchy.finest.num_cells), k)
    mg = build_nodal_mg(hierarchy, k, ops)
    b = random_vector(rng, hierarchy.finest.num_nodes)
    b -= b.mean()
    x = nodal_solve(mg, b, cycles=20)
    assert abs(x.mean()) <= 1e-12 * np.linalg.norm(x)
    P = mg.levels[-1].matrix
    assert np.linalg.norm(P @ x - b) <= 1e-8 * np.linalg.norm(b)
