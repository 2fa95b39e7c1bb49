# app/models/request_models.py

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from app.models.band_models import ConstantPermittivity, Permittivity, SubspaceMode


class SolveRequest(BaseModel):
    """One band solve at a single Bloch parameter"""

    a: float = Field(1.0, gt=0, description="Period in x1")
    b: float = Field(1.0, gt=0, description="Period in x2")
    n0: int = Field(8, ge=2, description="Coarsest grid cells in x1")
    m0: int = Field(8, ge=2, description="Coarsest grid cells in x2")
    levels: int = Field(1, ge=0, description="Bisection refinements of the coarsest grid")
    permittivity: Permittivity = ConstantPermittivity()
    k1: float
    k2: float

    p: int = Field(4, ge=1)
    q: Optional[int] = Field(None, ge=0)
    tol: float = Field(1e-2, gt=0)
    max_iter: int = Field(100, ge=1)
    mu: float = Field(1.0, gt=0)
    subspace: SubspaceMode = SubspaceMode.LOBPCG

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "n0": 8,
                "m0": 8,
                "levels": 2,
                "permittivity": {"kind": "disc", "center": [0.5, 0.5], "radius": 0.18, "eps_inside": 11.56},
                "k1": 3.14159,
                "k2": 0.0,
                "p": 4,
            }
        }
    )

    @property
    def finest_cells(self) -> int:
        return (self.n0 << self.levels) * (self.m0 << self.levels)


class ScheduleRequest(BaseModel):
    kappa: int = Field(..., ge=2, le=200)
    depth: int = Field(3, ge=1, le=3, description="Neighbour bases per extrapolation")
