# app/services/selftest.py

"""
Installation self-test: small problems with known answers.

    [1/3] oracle equivalence   PINVIT against the dense solver on 8x8
    [2/3] null space           A L = 0 on every level for several k
    [3/3] analytic spectrum    plane-wave eigenvalues on 16x16
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from app.models.band_models import SolverOptions, SubspaceMode
from app.services.corelinalg import dense_generalized_eig
from app.services.eigensolver import null_threshold
from app.services.mesh import BlochParameter, UnitCell, build_hierarchy
from app.services.operators import assemble_edge_operators, assemble_lifting
from app.services.problem import build_problem, cold_start_basis
from app.services.scan import nested_iteration_first

logger = logging.getLogger(__name__)

LiftingAssembler = Callable[..., object]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SelftestReport:
    checks: List[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def check_oracle_equivalence(seed: int = 42) -> CheckResult:
    cell = UnitCell()
    hierarchy = build_hierarchy(cell, 4, 4, 1)
    eps = np.ones(hierarchy.finest.num_cells)
    opts = SolverOptions(p=6, q=2, subspace=SubspaceMode.LOBPCG, tol=1e-10, max_iter=300)

    worst = 0.0
    for k1, k2 in [(np.pi / 3, np.pi / 5), (np.pi, np.pi), (0.1, -0.2)]:
        k = BlochParameter(k1, k2, cell)
        problem = build_problem(hierarchy, eps, k, opts)
        result = problem.solve(cold_start_basis(problem, opts.block_size, np.random.default_rng(seed)))

        values, _ = dense_generalized_eig(problem.A, problem.M)
        reference = values[values > null_threshold(problem.A, problem.M)][: opts.p]
        error = float(np.max(np.abs(result.eigenvalues - reference) / reference))
        worst = max(worst, error)
        if not result.converged:
            return CheckResult("oracle equivalence", False, f"no convergence at k=({k1:.3f},{k2:.3f})")

    return CheckResult("oracle equivalence", worst <= 1e-8, f"max relative error {worst:.2e}")


def check_null_space(assemble_lifting_fn: Optional[LiftingAssembler] = None, seed: int = 42) -> CheckResult:
    lifting = assemble_lifting_fn or assemble_lifting
    rng = np.random.default_rng(seed)
    cell = UnitCell()
    hierarchy = build_hierarchy(cell, 4, 4, 2)

    worst = 0.0
    for _ in range(4):
        k = BlochParameter(*rng.uniform(-np.pi, np.pi, size=2), cell)
        for level in hierarchy.levels:
            eps = rng.uniform(1.0, 10.0, size=level.num_cells)
            A, _ = assemble_edge_operators(level, eps, k)
            L = lifting(level, k)
            worst = max(worst, float(np.max(np.abs((A.matrix @ L).toarray()))) / A.max_abs())

    return CheckResult("null space", worst <= 1e-12, f"max |A L| / max |A| = {worst:.2e}")


def check_analytic_spectrum(tolerance: float = 0.03) -> CheckResult:
    cell = UnitCell()
    hierarchy = build_hierarchy(cell, 4, 4, 2)
    eps = np.ones(hierarchy.finest.num_cells)
    opts = SolverOptions(p=4, q=2, tol=1e-6, max_iter=200)

    worst = 0.0
    for k, exact in [(BlochParameter(0.0, 0.0, cell), 4 * np.pi**2), (BlochParameter(np.pi, np.pi, cell), 2 * np.pi**2)]:
        result = nested_iteration_first(hierarchy, eps, k, opts)
        if not result.converged:
            return CheckResult("analytic spectrum", False, f"no convergence at k={k.as_tuple()}")
        worst = max(worst, float(np.max(np.abs(result.eigenvalues - exact) / exact)))

    return CheckResult("analytic spectrum", worst <= tolerance, f"max relative error {worst:.2e}")


def selftest(assemble_lifting_fn: Optional[LiftingAssembler] = None, echo: bool = True) -> SelftestReport:
    """Run all checks, printing PASS/FAIL per check"""
    checks = [
        ("oracle equivalence", check_oracle_equivalence),
        ("null space", lambda: check_null_space(assemble_lifting_fn)),
        ("analytic spectrum", check_analytic_spectrum),
    ]
    report = SelftestReport()
    start = time.time()

    if echo:
        print("=" * 80)
        print("BLOCHBANDS SELF-TEST")
        print("=" * 80)

    for index, (name, run) in enumerate(checks, start=1):
        if echo:
            print(f"\n[{index}/{len(checks)}] {name}...")
        try:
            outcome = run()
        except Exception as e:
            logger.error(f"Self-test check '{name}' raised: {e}", exc_info=True)
            outcome = CheckResult(name, False, f"raised {type(e).__name__}: {e}")
        report.checks.append(outcome)
        if echo:
            print(f"    {'PASS' if outcome.passed else 'FAIL'}: {outcome.detail}")

    report.elapsed = time.time() - start
    if echo:
        print("\n" + "=" * 80)
        print("ALL CHECKS PASSED" if report.passed else "SELF-TEST FAILED")
        print(f"({report.elapsed:.1f}s)")
        print("=" * 80)
    return report
