import numpy as np
import pytest

from app.models.band_models import DiscPermittivity, SolverOptions
from app.services.mesh import BlochParameter, GridLevel, UnitCell, build_hierarchy
from app.services.operators import sample_permittivity


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cell():
    return UnitCell(1.0, 1.0)


@pytest.fixture
def level8(cell):
    return GridLevel(cell, 8, 8)


@pytest.fixture
def generic_k(cell):
    return BlochParameter(np.pi / 3, np.pi / 5, cell)


@pytest.fixture
def zero_k(cell):
    return BlochParameter(0.0, 0.0, cell)


@pytest.fixture
def small_hierarchy(cell):
    """4x4 -> 8x8"""
    return build_hierarchy(cell, 4, 4, 1)


@pytest.fixture
def disc():
    return DiscPermittivity(center=(0.5, 0.5), radius=1.0 / 3.0, eps_inside=100.0)


@pytest.fixture
def disc_eps(small_hierarchy, disc):
    return sample_permittivity(small_hierarchy.finest, disc)


@pytest.fixture
def tight_options():
    return SolverOptions(p=6, q=2, tol=1e-10, max_iter=300)


def discrete_plane_wave(h: float, wavenumber: float) -> float:
    """Eigenvalue of a plane wave on the lowest-order edge mesh with consistent mass"""
    theta = wavenumber * h
    return (2.0 * (1.0 - np.cos(theta)) / h**2) / ((2.0 + np.cos(theta)) / 3.0)
