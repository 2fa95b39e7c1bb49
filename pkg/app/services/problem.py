# app/services/problem.py

"""
Everything needed to solve at one Bloch parameter: operators on every level,
the edge and nodal multigrid hierarchies and the deflation pair.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.models.band_models import SolverOptions
from app.services.corelinalg import generalized_householder_qr
from app.services.eigensolver import SolveResult, deflate, deflation_vectors, pinvit_solve
from app.services.mesh import BlochParameter, GridHierarchy
from app.services.multigrid import (
    EdgeMGHierarchy,
    NodalMGHierarchy,
    build_edge_mg,
    build_nodal_mg,
    precondition,
    project_out_gradients,
)
from app.services.operators import LevelOperators, assemble_hierarchy_operators

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlochProblem:
    hierarchy: GridHierarchy
    k: BlochParameter
    eps: np.ndarray
    options: SolverOptions
    operators: List[LevelOperators]
    edge_mg: EdgeMGHierarchy
    nodal_mg: NodalMGHierarchy
    deflation: np.ndarray

    @property
    def finest(self) -> LevelOperators:
        return self.operators[-1]

    @property
    def A(self):
        return self.finest.A

    @property
    def M(self):
        return self.finest.M

    @property
    def L(self):
        return self.finest.L

    @property
    def dim(self) -> int:
        return self.finest.level.num_edges

    def precondition(self, R: np.ndarray) -> np.ndarray:
        return precondition(self.edge_mg, R, self.options.precond_cycles)

    def project(self, U: np.ndarray) -> np.ndarray:
        """Gradient projection followed by deflation of the constant fields"""
        U = project_out_gradients(self.M, self.L, self.nodal_mg, U, self.options.projection_cycles)
        return deflate(self.M, self.deflation, U)

    def orthonormalize(self, U: np.ndarray) -> np.ndarray:
        """Project, then M-orthonormalize by generalized Householder reflections"""
        E, _ = generalized_householder_qr(self.M, self.project(U))
        return E

    def solve(self, E0: np.ndarray, callback=None) -> SolveResult:
        return pinvit_solve(
            self.A,
            self.M,
            self.L,
            self.precondition,
            lambda U: project_out_gradients(self.M, self.L, self.nodal_mg, U, self.options.projection_cycles),
            E0,
            self.options,
            deflation=self.deflation,
            callback=callback,
        )

    def truncated(self, finest_index: int) -> "BlochProblem":
        """The same problem restricted to levels 0..finest_index"""
        return BlochProblem(
            hierarchy=self.hierarchy.truncated(finest_index),
            k=self.k,
            eps=self.eps,
            options=self.options,
            operators=self.operators[: finest_index + 1],
            edge_mg=self.edge_mg.truncated(finest_index),
            nodal_mg=self.nodal_mg.truncated(finest_index),
            deflation=deflation_vectors(self.operators[finest_index].level, self.k),
        )


def build_problem(
    hierarchy: GridHierarchy,
    eps: np.ndarray,
    k: BlochParameter,
    options: SolverOptions,
    operators: Optional[List[LevelOperators]] = None,
) -> BlochProblem:
    """Assemble operators and multigrid data for one Bloch parameter"""
    eps = np.asarray(eps, dtype=float)
    if operators is None:
        operators = assemble_hierarchy_operators(hierarchy, eps, k)
    edge_mg = build_edge_mg(hierarchy, eps, k, options.mu, operators=operators, nu1=options.nu1, nu2=options.nu2)
    nodal_mg = build_nodal_mg(hierarchy, k, operators, nu1=options.nu1, nu2=options.nu2)
    return BlochProblem(
        hierarchy=hierarchy,
        k=k,
        eps=eps,
        options=options,
        operators=operators,
        edge_mg=edge_mg,
        nodal_mg=nodal_mg,
        deflation=deflation_vectors(hierarchy.finest, k),
    )


def cold_start_basis(problem: BlochProblem, s: int, rng: np.random.Generator) -> np.ndarray:
    """Random complex start block, gradient-projected, deflated and M-orthonormal"""
    shape = (problem.dim, s)
    U = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return problem.orthonormalize(U)
