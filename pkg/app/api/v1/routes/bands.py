# app/api/v1/routes/bands.py

"""
Band structure endpoints: single Bloch-parameter solves and the scan
extrapolation schedule.
"""

import logging

from fastapi import APIRouter

from app.core.config import settings
from app.core.exceptions import InvalidInputError
from app.models.band_models import SolverOptions
from app.models.request_models import ScheduleRequest, SolveRequest
from app.models.response_models import ScheduleItem, ScheduleResponse, SolveResponse
from app.services.mesh import BlochParameter, UnitCell, build_hierarchy
from app.services.operators import sample_permittivity
from app.services.scan import nested_iteration_first, scan_schedule

logger = logging.getLogger(__name__)
router = APIRouter()


@router.post("/solve", response_model=SolveResponse)
def solve_bands(request: SolveRequest):
    """Smallest nonzero eigenvalues at one Bloch parameter"""
    if request.finest_cells > settings.MAX_API_CELLS:
        raise InvalidInputError(
            f"finest grid has {request.finest_cells} cells, the service accepts at most {settings.MAX_API_CELLS}"
        )

    cell = UnitCell(request.a, request.b)
    hierarchy = build_hierarchy(cell, request.n0, request.m0, request.levels)
    eps = sample_permittivity(hierarchy.finest, request.permittivity)
    opts = SolverOptions(
        p=request.p,
        q=request.q,
        subspace=request.subspace,
        tol=request.tol,
        max_iter=request.max_iter,
        mu=request.mu,
    )
    k = BlochParameter(request.k1, request.k2, cell)

    logger.info(f"Solving p={opts.p} bands at k=({request.k1:.4f},{request.k2:.4f}) on {hierarchy.finest.n}x{hierarchy.finest.m}")
    result = nested_iteration_first(hierarchy, eps, k, opts)

    return SolveResponse(
        k1=request.k1,
        k2=request.k2,
        eigenvalues=[float(v) for v in result.eigenvalues],
        residuals=[float(r) for r in result.residuals],
        iterations=result.iterations,
        converged=result.converged,
        grid=(hierarchy.finest.n, hierarchy.finest.m),
    )


@router.post("/schedule", response_model=ScheduleResponse)
async def get_schedule(request: ScheduleRequest):
    """Order in which a scan visits the Bloch grid and the neighbours each point starts from"""
    entries = scan_schedule(request.kappa, request.depth)
    return ScheduleResponse(
        kappa=request.kappa,
        points=len(entries),
        schedule=[
            ScheduleItem(i=e.i, j=e.j, stage=e.stage, sources=list(e.sources)) for e in entries
        ],
    )
