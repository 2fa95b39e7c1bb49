import numpy as np
import pytest

from app.core.exceptions import InvalidInputError
from app.models.band_models import SolverOptions
from app.services.corelinalg import dense_generalized_eig, generalized_householder_qr
from app.services.eigensolver import null_threshold, ritz_step
from app.services.mesh import BlochParameter, UnitCell, build_hierarchy
from app.services.problem import build_problem, cold_start_basis
from app.services.scan import (
    BandSurface,
    BlochGrid,
    extrapolate_initial,
    extrapolation_sources,
    nested_iteration_first,
    run_band_scan,
    scan_schedule,
)
from tests.conftest import discrete_plane_wave


def test_grid_corners_and_center(cell):
    grid = BlochGrid(30, cell)
    assert grid.point(0, 0).as_tuple() == pytest.approx((-np.pi, -np.pi))
    assert grid.point(29, 29).as_tuple() == pytest.approx((np.pi, np.pi))
    assert len(grid) == 900

    odd = BlochGrid(5, UnitCell(2.0, 0.5))
    center = odd.point(2, 2)
    assert center.as_tuple() == (0.0, 0.0)
    assert center.is_periodic
    assert odd.point(4, 0).as_tuple() == pytest.approx((np.pi / 2, -2 * np.pi))


def test_grid_rejects_small_kappa():
    with pytest.raises(InvalidInputError):
        BlochGrid(1)


@pytest.mark.parametrize(
    "point,expected",
    [
        ((0, 0), []),
        ((1, 0), [(0, 0)]),
        ((2, 0), [(0, 0), (1, 0)]),
        ((6, 0), [(3, 0), (4, 0), (5, 0)]),
        ((1, 1), [(1, 0)]),
        ((2, 2), [(2, 0), (2, 1)]),
        ((0, 5), [(0, 2), (0, 3), (0, 4)]),
        ((5, 3), [(2, 3), (3, 3), (4, 3)]),
        ((3, 1), [(0, 1), (1, 1), (2, 1)]),
    ],
)
def test_extrapolation_sources(point, expected):
    assert extrapolation_sources(*point) == expected


def test_extrapolation_depth_keeps_nearest():
    assert extrapolation_sources(5, 3, depth=1) == [(4, 3)]
    assert extrapolation_sources(0, 4, depth=2) == [(0, 2), (0, 3)]
    with pytest.raises(InvalidInputError):
        extrapolation_sources(1, 1, depth=4)


@pytest.mark.parametrize("kappa", [2, 3, 4, 7])
def test_schedule_is_a_dag_covering_the_grid(kappa):
    schedule = scan_schedule(kappa)
    order = {(e.i, e.j): n for n, e in enumerate(schedule)}
    assert len(order) == len(schedule) == kappa * kappa
    for entry in schedule:
        for source in entry.sources:
            assert order[source] < order[(entry.i, entry.j)]
        if entry.stage == "rows":
            assert all(src[1] == entry.j for src in entry.sources)


def test_nested_iteration_single_level(cell):
    hierarchy = build_hierarchy(cell, 8, 8, 0)
    opts = SolverOptions(p=4, tol=1e-8)
    result = nested_iteration_first(hierarchy, np.ones(64), BlochParameter(np.pi, np.pi, cell), opts)
    assert result.converged
    assert result.iterations <= 1


def test_nested_iteration_matches_cold_start(cell):
    hierarchy = build_hierarchy(cell, 4, 4, 2)
    k = BlochParameter(np.pi, np.pi, cell)
    eps = np.ones(hierarchy.finest.num_cells)
    opts = SolverOptions(p=4, q=2, tol=1e-8, max_iter=300)

    nested = nested_iteration_first(hierarchy, eps, k, opts)
    problem = build_problem(hierarchy, eps, k, opts)
    cold = problem.solve(cold_start_basis(problem, opts.block_size, np.random.default_rng(0)))

    assert nested.converged and cold.converged
    assert np.allclose(nested.eigenvalues, cold.eigenvalues, rtol=1e-6)
    assert nested.iterations < cold.iterations


def test_nested_iteration_rejects_too_few_coarse_modes(cell):
    hierarchy = build_hierarchy(cell, 2, 2, 1)
    with pytest.raises(InvalidInputError):
        nested_iteration_first(hierarchy, np.ones(16), BlochParameter(0.3, 0.2, cell), SolverOptions(p=6))


def test_prolongated_coarse_mode_keeps_its_rayleigh_quotient(cell):
    hierarchy = build_hierarchy(cell, 4, 4, 1)
    k = BlochParameter(0.4, 1.1, cell)
    problem = build_problem(hierarchy, np.ones(64), k, SolverOptions(p=2))
    coarse = problem.operators[0]
    values, vectors = dense_generalized_eig(coarse.A, coarse.M)
    first = np.flatnonzero(values > null_threshold(coarse.A, coarse.M))[0]

    fine = problem.operators[1]
    e = fine.edge_prolongation @ vectors[:, first]
    quotient = np.real(np.vdot(e, fine.A @ e) / np.vdot(e, fine.M @ e))
    assert values[first] / 2 <= quotient <= 2 * values[first]


def test_extrapolation_from_exact_basis_converges_immediately(small_hierarchy, disc_eps, generic_k):
    opts = SolverOptions(p=4, q=2, tol=1e-6)
    problem = build_problem(small_hierarchy, disc_eps, generic_k, opts)
    solved = problem.solve(cold_start_basis(problem, opts.block_size, np.random.default_rng(0)))

    E0 = extrapolate_initial([solved.block], problem.A, problem.M, problem.project, opts.block_size)
    again = problem.solve(E0)
    assert again.converged
    assert again.iterations <= 1


def test_extrapolation_dominates_each_source(cell, small_hierarchy, disc_eps):
    opts = SolverOptions(p=4, q=2, tol=1e-4)
    s = opts.block_size
    neighbours = [BlochParameter(0.2 + 0.1 * n, 0.5, cell) for n in range(3)]
    blocks = []
    for k in neighbours:
        problem = build_problem(small_hierarchy, disc_eps, k, opts)
        blocks.append(problem.solve(cold_start_basis(problem, s, np.random.default_rng(1))).block)

    target = build_problem(small_hierarchy, disc_eps, BlochParameter(0.5, 0.5, cell), opts)
    threshold = null_threshold(target.A, target.M)
    combined = extrapolate_initial(blocks, target.A, target.M, target.project, s)
    combined_values = np.real(np.diag(combined.conj().T @ (target.A @ combined)))

    for block in blocks:
        Q, _ = generalized_householder_qr(target.M, target.project(block))
        _, single_values = ritz_step(target.A, target.M, Q, s, threshold)
        assert np.all(combined_values <= single_values + 1e-8 * single_values)


def test_extrapolation_requires_a_source():
    with pytest.raises(InvalidInputError):
        extrapolate_initial([], None, None, lambda U: U, 2)


@pytest.fixture(scope="module")
def odd_scan():
    cell = UnitCell()
    hierarchy = build_hierarchy(cell, 4, 4, 1)
    eps = np.ones(hierarchy.finest.num_cells)
    opts = SolverOptions(p=2, tol=1e-4)
    return run_band_scan(hierarchy, eps, BlochGrid(3, cell), opts, threads=2), opts


def test_scan_fills_every_point(odd_scan):
    surface, opts = odd_scan
    assert surface.complete
    assert surface.eigenvalues.shape == (3, 3, 2)
    assert surface.converged.all()
    assert np.all(surface.eigenvalues > 10 * opts.tol)


def test_scan_handles_zero_k(odd_scan):
    surface, _ = odd_scan
    # homogeneous medium: the lowest k = 0 band is the discrete plane wave of wavenumber 2 pi
    expected = discrete_plane_wave(1 / 8, 2 * np.pi)
    assert surface.eigenvalues[1, 1] == pytest.approx(np.full(2, expected), rel=1e-4)


def test_scan_is_time_reversal_symmetric(odd_scan):
    surface, opts = odd_scan
    kappa = surface.grid.kappa
    for i, j in surface.grid.indices():
        mirrored = surface.eigenvalues[kappa - 1 - i, kappa - 1 - j]
        assert np.allclose(surface.eigenvalues[i, j], mirrored, atol=10 * opts.tol)


def test_threaded_scan_is_deterministic(cell):
    hierarchy = build_hierarchy(cell, 4, 4, 1)
    eps = np.ones(hierarchy.finest.num_cells)
    opts = SolverOptions(p=2, tol=1e-3)
    grid = BlochGrid(5, cell)
    first = run_band_scan(hierarchy, eps, grid, opts, threads=1)
    second = run_band_scan(hierarchy, eps, grid, opts, threads=3)
    assert np.allclose(first.eigenvalues, second.eigenvalues, rtol=1e-10)
    assert np.array_equal(first.iterations, second.iterations)


def test_cold_scan_uses_seeded_starts(cell):
    hierarchy = build_hierarchy(cell, 4, 4, 1)
    eps = np.ones(hierarchy.finest.num_cells)
    opts = SolverOptions(p=2, tol=1e-3)
    grid = BlochGrid(2, cell)
    first = run_band_scan(hierarchy, eps, grid, opts, warm_start=False, seed=3)
    second = run_band_scan(hierarchy, eps, grid, opts, warm_start=False, seed=3)
    assert np.array_equal(first.eigenvalues, second.eigenvalues)


def test_band_gaps():
    grid = BlochGrid(2)
    surface = BandSurface.empty(grid, 3)
    surface.eigenvalues[:, :, 0] = [[1.0, 2.0], [1.5, 2.5]]
    surface.eigenvalues[:, :, 1] = [[3.0, 4.0], [3.5, 6.0]]
    surface.eigenvalues[:, :, 2] = [[5.0, 7.0], [6.5, 8.0]]
    gaps = surface.band_gaps()
    assert len(gaps) == 1
    assert gaps[0].band == 1
    assert (gaps[0].lower, gaps[0].upper) == (2.5, 3.0)
    assert gaps[0].width == pytest.approx(0.5)
