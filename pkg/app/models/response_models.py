# app/models/response_models.py

from typing import List, Tuple

from pydantic import BaseModel


class SolveResponse(BaseModel):
    k1: float
    k2: float
    eigenvalues: List[float]
    residuals: List[float]
    iterations: int
    converged: bool
    grid: Tuple[int, int]


class ScheduleItem(BaseModel):
    i: int
    j: int
    stage: str
    sources: List[Tuple[int, int]]


class ScheduleResponse(BaseModel):
    kappa: int
    points: int
    schedule: List[ScheduleItem]
