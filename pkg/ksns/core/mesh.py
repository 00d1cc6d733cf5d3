"""
Discrete domain and field containers

The domain is an axis-aligned box split into ``cells[i]`` cells per axis.
Scalars live at cell centres, vector components on the faces normal to
their own axis (MAC staggering):

- scalar values: array shaped ``cells``
- component i, no-flux/no-slip: ``cells`` with axis i extended by one,
  faces 0 and N are the walls
- component i, periodic: ``cells``, face k sits between cells k-1 (wrapped) and k
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence, Tuple

import numpy as np

from ksns.core.errors import DimensionMismatch, InvalidExtent, NegativeBase, NonFiniteField

logger = logging.getLogger(__name__)

ROUNDOFF_TOL = 1e-10
MIN_CELLS = 4


class Boundary(str, Enum):
    NO_FLUX_NO_SLIP = "no_flux_no_slip"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Grid:
    """Rectangular box discretization"""

    dim: int
    cells: Tuple[int, ...]
    lengths: Tuple[float, ...]
    spacing: Tuple[float, ...]
    boundary: Boundary

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.cells

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cells))

    def face_shape(self, axis: int) -> Tuple[int, ...]:
        if self.periodic:
            return self.cells
        shape = list(self.cells)
        shape[axis] += 1
        return tuple(shape)

    def centers(self, axis: int) -> np.ndarray:
        """1-d cell-centre coordinates along an axis"""
        return (np.arange(self.cells[axis]) + 0.5) * self.spacing[axis]

    def faces(self, axis: int) -> np.ndarray:
        """1-d face coordinates along an axis (walls included when bounded)"""
        count = self.cells[axis] if self.periodic else self.cells[axis] + 1
        return np.arange(count) * self.spacing[axis]

    def cell_coordinates(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.centers(a) for a in range(self.dim)], indexing="ij"))

    def face_coordinates(self, axis: int) -> Tuple[np.ndarray, ...]:
        axes = [self.faces(a) if a == axis else self.centers(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def refined(self, factor: int = 2) -> "Grid":
        return make_grid(self.dim, [c * factor for c in self.cells], list(self.lengths), self.boundary)


def make_grid(dim: int, cells: Sequence[int], lengths: Sequence[float], boundary) -> Grid:
    """Build a validated grid"""
    if dim not in (2, 3):
        raise DimensionMismatch(f"dim must be 2 or 3, got {dim}")
    if len(cells) != dim or len(lengths) != dim:
        raise DimensionMismatch(
            f"dim={dim} but got {len(cells)} cell counts and {len(lengths)} lengths"
        )
    cells = tuple(int(c) for c in cells)
    lengths = tuple(float(length) for length in lengths)
    if any(c < MIN_CELLS for c in cells):
        raise InvalidExtent(f"every axis needs at least {MIN_CELLS} cells, got {cells}")
    if any(not np.isfinite(length) or length <= 0.0 for length in lengths):
        raise InvalidExtent(f"lengths must be positive, got {lengths}")
    spacing = tuple(length / c for length, c in zip(lengths, cells))
    return Grid(dim=dim, cells=cells, lengths=lengths, spacing=spacing, boundary=Boundary(boundary))


# ============================================================================
# FIELDS
# ============================================================================

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Cell-centred samples"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise DimensionMismatch(f"scalar shape {self.values.shape} != grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> "ScalarField":
        values = np.asarray(fn(*grid.cell_coordinates()), dtype=float)
        return cls(grid, np.broadcast_to(values, grid.shape).copy())

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def check_finite(self, name: str = "field") -> "ScalarField":
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteField(f"{name} contains NaN or Inf")
        return self


@dataclass(frozen=True, eq=False)
class FaceField:
    """Face-centred samples, one array per axis (MAC layout)"""

    grid: Grid
    components: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.components) != self.grid.dim:
            raise DimensionMismatch(
                f"{len(self.components)} components for a {self.grid.dim}-d grid"
            )
        for axis, comp in enumerate(self.components):
            if comp.shape != self.grid.face_shape(axis):
                raise DimensionMismatch(
                    f"component {axis} shape {comp.shape} != {self.grid.face_shape(axis)}"
                )

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, tuple(np.zeros(grid.face_shape(a)) for a in range(grid.dim)))

    @classmethod
    def from_functions(cls, grid: Grid, fns: Sequence[Callable[..., np.ndarray]]):
        comps = []
        for axis, fn in enumerate(fns):
            shape = grid.face_shape(axis)
            comps.append(np.broadcast_to(np.asarray(fn(*grid.face_coordinates(axis)), dtype=float), shape).copy())
        return cls(grid, tuple(comps)).with_walls_zeroed()

    def with_components(self, components: Sequence[np.ndarray]):
        return type(self)(self.grid, tuple(components))

    def copy(self):
        return type(self)(self.grid, tuple(c.copy() for c in self.components))

    def with_walls_zeroed(self):
        """Boundary-normal entries set to exactly 0 (no-op when periodic)"""
        if self.grid.periodic:
            return self
        comps = []
        for axis, comp in enumerate(self.components):
            comp = comp.copy()
            zero_walls(comp, axis)
            comps.append(comp)
        return type(self)(self.grid, tuple(comps))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(c))) for c in self.components)

    def check_finite(self, name: str = "field"):
        if not all(np.all(np.isfinite(c)) for c in self.components):
            raise NonFiniteField(f"{name} contains NaN or Inf")
        return self


class VectorField(FaceField):
    """Velocity-like field on MAC faces"""


class FaceFlux(FaceField):
    """Flux densities on MAC faces"""


def zero_walls(comp: np.ndarray, axis: int) -> None:
    """Zero the two wall layers of a bounded face array in place"""
    index = [slice(None)] * comp.ndim
    index[axis] = 0
    comp[tuple(index)] = 0.0
    index[axis] = -1
    comp[tuple(index)] = 0.0


# ============================================================================
# REDUCTIONS
# ============================================================================

def pairwise_sum(values: np.ndarray) -> float:
    """Deterministic pairwise sum over a contiguous copy (no BLAS)"""
    return float(np.add.reduce(np.ascontiguousarray(values).ravel()))


def integrate(field: ScalarField) -> float:
    """Discrete integral over the box"""
    return pairwise_sum(field.values) * field.grid.cell_volume


def inner(f: ScalarField, g: ScalarField) -> float:
    return pairwise_sum(f.values * g.values) * f.grid.cell_volume


def face_inner(a: FaceField, b: FaceField) -> float:
    """Sum over faces of a_i * b_i times the cell volume"""
    total = 0.0
    for ca, cb in zip(a.components, b.components):
        total += pairwise_sum(ca * cb)
    return total * a.grid.cell_volume


def l2_norm(field: ScalarField) -> float:
    return float(np.sqrt(inner(field, field)))


def face_l2_norm(field: FaceField) -> float:
    return float(np.sqrt(face_inner(field, field)))


def clamp_roundoff(values: np.ndarray, error_cls=NegativeBase, name: str = "field",
                   tol: float = ROUNDOFF_TOL) -> np.ndarray:
    """Set roundoff negatives to 0; anything below -tol is an error"""
    lowest = float(np.min(values))
    if lowest < -tol:
        raise error_cls(f"{name} has value {lowest:.3e} below -{tol:g}")
    if lowest < 0.0:
        return np.where(values < 0.0, 0.0, values)
    return values


def lp_norm(field: ScalarField, p: float) -> float:
    """Discrete L^p norm; non-integer p requires a nonnegative field"""
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    if float(p).is_integer():
        base = np.abs(field.values)
    else:
        base = clamp_roundoff(field.values, NegativeBase, "lp_norm base")
    return (pairwise_sum(base ** p) * field.grid.cell_volume) ** (1.0 / p)
