# app/models/band_models.py

import math
from enum import Enum
from pathlib import Path
from typing import Annotated, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings
from app.core.exceptions import InvalidInputError

# ===== ENUMS =====


class SubspaceMode(str, Enum):
    PLAIN = "plain"
    GRADIENT = "gradient"
    LOBPCG = "lobpcg"


class RunMode(str, Enum):
    SCAN = "scan"
    SINGLE = "single"
    SELFTEST = "selftest"


class TransferKind(str, Enum):
    EDGE = "edge"
    NODAL = "nodal"


# ===== PERMITTIVITY =====


class ConstantPermittivity(BaseModel):
    """Homogeneous medium"""

    kind: Literal["constant"] = "constant"
    value: float = Field(1.0, gt=0, description="Relative permittivity")

    model_config = ConfigDict(frozen=True)


class DiscPermittivity(BaseModel):
    """Circular inclusion in a background, membership decided at cell midpoints"""

    kind: Literal["disc"] = "disc"
    center: Tuple[float, float] = Field((0.5, 0.5), description="Disc center")
    radius: float = Field(..., gt=0)
    eps_inside: float = Field(..., gt=0)
    eps_outside: float = Field(1.0, gt=0)

    model_config = ConfigDict(frozen=True)


class RasterPermittivity(BaseModel):
    """Per-fine-cell values in row-major order (x index fastest)"""

    kind: Literal["raster"] = "raster"
    n: int = Field(..., ge=2)
    m: int = Field(..., ge=2)
    values: Tuple[float, ...]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_values(self):
        if len(self.values) != self.n * self.m:
            raise ValueError(
                f"raster declares {self.n}x{self.m} cells but holds {len(self.values)} values"
            )
        if any(not (v > 0) for v in self.values):
            raise ValueError("raster permittivity values must be positive")
        return self

    @classmethod
    def from_text(cls, text: str) -> "RasterPermittivity":
        """Parse 'n m' followed by n*m whitespace-separated positive reals"""
        tokens = text.split()
        if len(tokens) < 2:
            raise InvalidInputError("raster file must start with 'n m'")
        try:
            n, m = int(tokens[0]), int(tokens[1])
            values = tuple(float(t) for t in tokens[2:])
        except ValueError as e:
            raise InvalidInputError(f"malformed raster file: {e}") from e
        try:
            return cls(n=n, m=m, values=values)
        except ValueError as e:
            raise InvalidInputError(str(e)) from e

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RasterPermittivity":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


Permittivity = Annotated[
    Union[ConstantPermittivity, DiscPermittivity, RasterPermittivity],
    Field(discriminator="kind"),
]


def permittivity_from_text(text: str, base_dir: Optional[Path] = None):
    """
    Parse the compact permittivity notation of run configs.

    Accepted forms:
        constant <eps>
        disc <cx> <cy> <radius> <eps_inside> [<eps_outside>]
        raster <path>
    """
    parts = text.split()
    if not parts:
        raise InvalidInputError("empty permittivity specification")
    kind, args = parts[0].lower(), parts[1:]

    if kind == "raster":
        if len(args) != 1:
            raise InvalidInputError("raster takes exactly one path")
        path = Path(args[0])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return RasterPermittivity.from_file(path)

    try:
        numbers = [float(a) for a in args]
    except ValueError as e:
        raise InvalidInputError(f"non-numeric permittivity argument: {e}") from e

    try:
        if kind == "constant":
            if len(numbers) != 1:
                raise InvalidInputError("constant takes exactly one value")
            return ConstantPermittivity(value=numbers[0])
        if kind == "disc":
            if len(numbers) not in (4, 5):
                raise InvalidInputError("disc takes cx cy radius eps_inside [eps_outside]")
            return DiscPermittivity(
                center=(numbers[0], numbers[1]),
                radius=numbers[2],
                eps_inside=numbers[3],
                eps_outside=numbers[4] if len(numbers) == 5 else 1.0,
            )
    except ValueError as e:
        if isinstance(e, InvalidInputError):
            raise
        raise InvalidInputError(f"invalid permittivity: {e}") from e

    raise InvalidInputError(f"unknown permittivity kind '{kind}'")


def permittivity_to_text(eps) -> str:
    if isinstance(eps, ConstantPermittivity):
        return f"constant {eps.value!r}"
    if isinstance(eps, DiscPermittivity):
        return (
            f"disc {eps.center[0]!r} {eps.center[1]!r} {eps.radius!r} "
            f"{eps.eps_inside!r} {eps.eps_outside!r}"
        )
    return f"raster <{eps.n}x{eps.m} values>"


# ===== SOLVER OPTIONS =====


class SolverOptions(BaseModel):
    """Parameters of the block preconditioned inverse iteration"""

    p: int = Field(..., ge=1, description="Wanted eigenpairs")
    q: Optional[int] = Field(
        None, ge=0, validate_default=True, description="Throw-away columns, default ceil(p/2)"
    )
    subspace: SubspaceMode = SubspaceMode.LOBPCG
    tol: float = Field(1e-2, gt=0, description="Per-column defect threshold")
    max_iter: int = Field(100, ge=1)
    mu: float = Field(1.0, gt=0, description="Regularization of A + mu M")
    precond_cycles: int = Field(2, ge=1)
    projection_cycles: int = Field(3, ge=1)
    nu1: int = Field(2, ge=1, description="Pre-smoothing sweeps")
    nu2: int = Field(2, ge=1, description="Post-smoothing sweeps")
    reproject: bool = True

    model_config = ConfigDict(frozen=True, use_enum_values=False)

    @field_validator("q")
    @classmethod
    def default_throwaway(cls, v, info):
        if v is None:
            p = info.data.get("p")
            return math.ceil(p / 2) if p is not None else None
        return v

    @property
    def block_size(self) -> int:
        return self.p + self.q


# ===== RUN CONFIG =====


class RunConfig(BaseModel):
    """Fully resolved run configuration of the command-line front end"""

    mode: RunMode

    # Unit cell and mesh hierarchy
    a: float = Field(1.0, gt=0)
    b: float = Field(1.0, gt=0)
    n0: int = Field(16, ge=2)
    m0: int = Field(16, ge=2)
    levels: int = Field(2, ge=0)
    permittivity: Permittivity = ConstantPermittivity()

    # Bloch sampling
    kappa: int = Field(30, ge=2)
    k1: Optional[float] = None
    k2: Optional[float] = None
    extrapolation_depth: int = Field(3, ge=1, le=3)
    warm_start: bool = True

    # Eigensolver
    p: int = Field(16, ge=1)
    q: Optional[int] = Field(None, ge=0, validate_default=True)
    tol: float = Field(1e-2, gt=0)
    max_iter: int = Field(100, ge=1)
    mu: float = Field(1.0, gt=0)
    precond_cycles: int = Field(2, ge=1)
    projection_cycles: int = Field(3, ge=1)
    subspace: SubspaceMode = SubspaceMode.LOBPCG

    # Execution
    seed: int = Field(default_factory=lambda: settings.SEED, ge=0)
    threads: int = Field(1, ge=1)
    output: str = "bands.csv"

    model_config = ConfigDict(frozen=True)

    @field_validator("q")
    @classmethod
    def default_throwaway(cls, v, info):
        if v is None:
            p = info.data.get("p")
            return math.ceil(p / 2) if p is not None else None
        return v

    @model_validator(mode="after")
    def check_single_mode(self):
        if self.mode == RunMode.SINGLE and (self.k1 is None or self.k2 is None):
            raise ValueError("single mode requires k1 and k2")
        return self

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            p=self.p,
            q=self.q,
            subspace=self.subspace,
            tol=self.tol,
            max_iter=self.max_iter,
            mu=self.mu,
            precond_cycles=self.precond_cycles,
            projection_cycles=self.projection_cycles,
        )
