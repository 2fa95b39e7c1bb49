# app/services/mesh.py

"""
Rectangular unit-cell meshes with Bloch-periodic index wrapping.

Index convention (0-based):
    node (i1, i2)   sits at ((i1+1) h1, (i2+1) h2)
    x-edge (i1, i2) runs from node (i1-1, i2) to node (i1, i2)
    y-edge (i1, i2) runs from node (i1, i2-1) to node (i1, i2)
    cell (c1, c2)   is [c1 h1, (c1+1) h1] x [c2 h2, (c2+1) h2]

Every node owns one x-edge and one y-edge, so a level with n x m cells has
n*m nodal and 2*n*m edge degrees of freedom. Edges and nodes outside the
index range are translates of canonical ones; the coefficient seen through
such a raw index equals alpha^s beta^t times the canonical coefficient, where
(s, t) counts the periods crossed.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from app.core.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

X_EDGE = 0
Y_EDGE = 1


@dataclass(frozen=True)
class UnitCell:
    """Periods of the dielectric in x1 and x2"""

    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidInputError(f"unit cell dimensions must be positive, got a={self.a}, b={self.b}")

    @property
    def area(self) -> float:
        return self.a * self.b


@dataclass(frozen=True)
class BlochParameter:
    """Wave vector k together with its phase factors on a given unit cell"""

    k1: float
    k2: float
    cell: UnitCell = field(default_factory=UnitCell)

    @property
    def alpha(self) -> complex:
        return complex(np.exp(1j * self.k1 * self.cell.a))

    @property
    def beta(self) -> complex:
        return complex(np.exp(1j * self.k2 * self.cell.b))

    @property
    def is_periodic(self) -> bool:
        """True when alpha = beta = 1, i.e. k is a reciprocal lattice vector"""
        return abs(self.alpha - 1.0) < 1e-12 and abs(self.beta - 1.0) < 1e-12

    def negated(self) -> "BlochParameter":
        return BlochParameter(-self.k1, -self.k2, self.cell)

    def as_tuple(self) -> Tuple[float, float]:
        return (self.k1, self.k2)


def _unit_power(z: complex, s: np.ndarray) -> np.ndarray:
    """z**s for unit-modulus z and integer s, exact for s in {-1, 0, 1}"""
    s = np.asarray(s)
    out = np.ones(s.shape, dtype=complex)
    out[s == 1] = z
    out[s == -1] = np.conj(z)
    other = (s != 0) & (np.abs(s) != 1)
    if np.any(other):
        out[other] = np.exp(1j * np.angle(z) * s[other])
    return out


@dataclass(frozen=True)
class GridLevel:
    """One mesh of the hierarchy: n x m cells on the unit cell"""

    cell: UnitCell
    n: int
    m: int

    def __post_init__(self):
        if self.n < 2 or self.m < 2:
            raise InvalidInputError(f"grid needs at least 2x2 cells, got {self.n}x{self.m}")

    @property
    def h1(self) -> float:
        return self.cell.a / self.n

    @property
    def h2(self) -> float:
        return self.cell.b / self.m

    @property
    def num_nodes(self) -> int:
        return self.n * self.m

    @property
    def num_edges(self) -> int:
        return 2 * self.n * self.m

    @property
    def num_cells(self) -> int:
        return self.n * self.m

    def node_id(self, i1, i2):
        return np.asarray(i2) * self.n + np.asarray(i1)

    def edge_id(self, comp, i1, i2):
        return np.asarray(comp) * self.num_nodes + np.asarray(i2) * self.n + np.asarray(i1)

    def node_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Index arrays (i1, i2) of all nodes in id order"""
        i2, i1 = np.divmod(np.arange(self.num_nodes), self.n)
        return i1, i2

    def cell_midpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        c2, c1 = np.divmod(np.arange(self.num_cells), self.n)
        return (c1 + 0.5) * self.h1, (c2 + 0.5) * self.h2

    def wrap_nodes(self, k: BlochParameter, i1, i2) -> Tuple[np.ndarray, np.ndarray]:
        """Canonical node ids and phases for raw node indices"""
        s, c1 = np.divmod(np.asarray(i1), self.n)
        t, c2 = np.divmod(np.asarray(i2), self.m)
        phase = _unit_power(k.alpha, s) * _unit_power(k.beta, t)
        return self.node_id(c1, c2), phase

    def wrap_edges(self, k: BlochParameter, comp, i1, i2) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized wrap_edge: canonical edge ids and phases for raw edge indices"""
        s, c1 = np.divmod(np.asarray(i1), self.n)
        t, c2 = np.divmod(np.asarray(i2), self.m)
        phase = _unit_power(k.alpha, s) * _unit_power(k.beta, t)
        return self.edge_id(comp, c1, c2), phase

    def refined(self) -> "GridLevel":
        return GridLevel(self.cell, 2 * self.n, 2 * self.m)


def wrap_edge(level: GridLevel, k: BlochParameter, raw_index: Tuple[int, int, int]) -> Tuple[int, complex]:
    """
    Resolve a possibly out-of-range edge index (component, i1, i2).

    Returns the canonical edge id and the phase relating the coefficient seen
    through the raw index to the canonical coefficient.
    """
    comp, i1, i2 = raw_index
    if comp not in (X_EDGE, Y_EDGE):
        raise InvalidInputError(f"edge component must be 0 (x) or 1 (y), got {comp}")
    gid, phase = level.wrap_edges(k, comp, np.array([i1]), np.array([i2]))
    return int(gid[0]), complex(phase[0])


@dataclass(frozen=True)
class GridHierarchy:
    """Nested meshes ordered coarsest (index 0) to finest"""

    levels: Tuple[GridLevel, ...]

    def __post_init__(self):
        for coarse, fine in zip(self.levels, self.levels[1:]):
            if fine.n != 2 * coarse.n or fine.m != 2 * coarse.m:
                raise InvalidInputError("hierarchy levels must be related by bisection")

    @property
    def finest(self) -> GridLevel:
        return self.levels[-1]

    @property
    def coarsest(self) -> GridLevel:
        return self.levels[0]

    @property
    def cell(self) -> UnitCell:
        return self.levels[0].cell

    def __len__(self) -> int:
        return len(self.levels)

    def truncated(self, finest_index: int) -> "GridHierarchy":
        return GridHierarchy(self.levels[: finest_index + 1])


def build_hierarchy(cell: UnitCell, n0: int, m0: int, L: int) -> GridHierarchy:
    """Coarsest n0 x m0 mesh refined L times by bisection (L+1 levels)"""
    if n0 < 2 or m0 < 2:
        raise InvalidInputError(f"coarsest grid needs at least 2x2 cells, got {n0}x{m0}")
    if L < 0:
        raise InvalidInputError(f"level count must be non-negative, got {L}")

    levels: List[GridLevel] = [GridLevel(cell, n0, m0)]
    for _ in range(L):
        levels.append(levels[-1].refined())

    finest = levels[-1]
    logger.info(
        f"Built hierarchy with {len(levels)} levels, finest {finest.n}x{finest.m} "
        f"({finest.num_edges} edge DOFs)"
    )
    return GridHierarchy(tuple(levels))
