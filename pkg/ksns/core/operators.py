"""
Discrete differential operators on the MAC grid

All transport is first-order donor-cell; diffusion fluxes are written in
conservation form so that every divergence telescopes to zero over the box.
"""

import logging
from typing import Tuple

import numpy as np

from ksns.core.errors import NonPhysicalDensity, NotDivergenceFree
from ksns.core.mesh import (
    FaceField,
    FaceFlux,
    Grid,
    ScalarField,
    VectorField,
    clamp_roundoff,
    zero_walls,
)

logger = logging.getLogger(__name__)

DIVERGENCE_TOL = 1e-8


# ============================================================================
# STENCIL HELPERS
# ============================================================================

def _sl(a: np.ndarray, axis: int, start, stop) -> np.ndarray:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    return a[tuple(index)]


def neighbors(a: np.ndarray, axis: int, periodic: bool, ghost: str = "edge") -> Tuple[np.ndarray, np.ndarray]:
    """Return (a[k-1], a[k+1]) along an axis

    Bounded arrays get one ghost layer per side: ``edge`` repeats the
    boundary value, ``odd`` mirrors it with a sign flip (no-slip wall
    half a cell away).
    """
    if periodic:
        return np.roll(a, 1, axis=axis), np.roll(a, -1, axis=axis)
    first = _sl(a, axis, 0, 1)
    last = _sl(a, axis, -1, None)
    if ghost == "odd":
        first, last = -first, -last
    prev = np.concatenate([first, _sl(a, axis, 0, -1)], axis=axis)
    nxt = np.concatenate([_sl(a, axis, 1, None), last], axis=axis)
    return prev, nxt


def face_neighbors(values: np.ndarray, axis: int, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Cell values left and right of every face normal to ``axis``

    Wall faces see the adjacent cell on both sides.
    """
    if grid.periodic:
        return np.roll(values, 1, axis=axis), values
    padded = np.concatenate([_sl(values, axis, 0, 1), values, _sl(values, axis, -1, None)], axis=axis)
    return _sl(padded, axis, 0, -1), _sl(padded, axis, 1, None)


def cells_to_faces(values: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    left, right = face_neighbors(values, axis, grid)
    return 0.5 * (left + right)


def faces_to_cells(comp: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    if grid.periodic:
        return 0.5 * (comp + np.roll(comp, -1, axis=axis))
    return 0.5 * (_sl(comp, axis, 0, -1) + _sl(comp, axis, 1, None))


def interpolate_component(w: FaceField, source_axis: int, target_axis: int) -> np.ndarray:
    """Component ``source_axis`` of w averaged onto the faces normal to ``target_axis``"""
    grid = w.grid
    comp = w.components[source_axis]
    if source_axis == target_axis:
        return comp.copy()
    centred = faces_to_cells(comp, source_axis, grid)
    return cells_to_faces(centred, target_axis, grid)


# ============================================================================
# CORE OPERATORS
# ============================================================================

def gradient(f: ScalarField) -> FaceFlux:
    """Face differences; wall faces are 0 in no-flux mode"""
    grid = f.grid
    comps = []
    for axis in range(grid.dim):
        h = grid.spacing[axis]
        if grid.periodic:
            comps.append((f.values - np.roll(f.values, 1, axis=axis)) / h)
        else:
            g = np.zeros(grid.face_shape(axis))
            _sl(g, axis, 1, -1)[...] = np.diff(f.values, axis=axis) / h
            comps.append(g)
    return FaceFlux(grid, tuple(comps))


def divergence(flux: FaceField) -> ScalarField:
    grid = flux.grid
    out = np.zeros(grid.shape)
    for axis in range(grid.dim):
        comp = flux.components[axis]
        h = grid.spacing[axis]
        if grid.periodic:
            out += (np.roll(comp, -1, axis=axis) - comp) / h
        else:
            out += np.diff(comp, axis=axis) / h
    return ScalarField(grid, out)


def laplacian(f: ScalarField) -> ScalarField:
    """Standard 2d+1 point stencil, identical to divergence(gradient(f))"""
    return divergence(gradient(f))


def component_laplacian(a: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Laplacian of one MAC velocity component

    Along its own axis the wall faces are Dirichlet 0; across the other axes
    the no-slip condition is imposed by an odd ghost layer.
    """
    out = np.zeros_like(a)
    for j in range(grid.dim):
        ghost = "edge" if j == axis else "odd"
        prev, nxt = neighbors(a, j, grid.periodic, ghost)
        out += (nxt - 2.0 * a + prev) / grid.spacing[j] ** 2
    if not grid.periodic:
        zero_walls(out, axis)
    return out


def vector_laplacian(u: VectorField) -> VectorField:
    grid = u.grid
    return VectorField(grid, tuple(component_laplacian(c, a, grid) for a, c in enumerate(u.components)))


def divergence_defect(u: FaceField) -> float:
    """max|div u| scaled by max(1, max|u| / h_min)"""
    div = divergence(u).values
    scale = max(1.0, u.max_abs() / u.grid.min_spacing)
    return float(np.max(np.abs(div))) / scale


# ============================================================================
# PHYSICAL FLUXES
# ============================================================================

def porous_medium_flux(n: ScalarField, eps: float, m: float) -> FaceFlux:
    """Conservative discretization of grad (n + eps)^m

    Face flux is m (nbar + eps)^(m-1) times the face difference of n, with
    nbar the arithmetic face average.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if m <= 1.0:
        raise ValueError(f"m must exceed 1, got {m}")
    grid = n.grid
    values = clamp_roundoff(n.values, NonPhysicalDensity, "n")
    grad = gradient(ScalarField(grid, values))
    comps = []
    for axis in range(grid.dim):
        nbar = cells_to_faces(values, axis, grid)
        comps.append(m * (nbar + eps) ** (m - 1.0) * grad.components[axis])
    return FaceFlux(grid, tuple(comps))


def chemotaxis_flux(n: ScalarField, c: ScalarField) -> FaceFlux:
    """Donor-cell n times the face gradient of c"""
    grid = n.grid
    values = clamp_roundoff(n.values, NonPhysicalDensity, "n")
    grad = gradient(c)
    comps = []
    for axis in range(grid.dim):
        g = grad.components[axis]
        left, right = face_neighbors(values, axis, grid)
        comps.append(np.where(g > 0.0, left, right) * g)
    return FaceFlux(grid, tuple(comps))


def upwind_flux(f: ScalarField, u: FaceField) -> FaceFlux:
    grid = f.grid
    comps = []
    for axis in range(grid.dim):
        ua = u.components[axis]
        left, right = face_neighbors(f.values, axis, grid)
        comps.append(ua * np.where(ua > 0.0, left, right))
    return FaceFlux(grid, tuple(comps))


def advect_scalar(f: ScalarField, u: VectorField, tol: float = DIVERGENCE_TOL) -> ScalarField:
    """div(u f) with donor-cell face values"""
    defect = divergence_defect(u)
    if defect > tol:
        raise NotDivergenceFree(f"scaled divergence {defect:.3e} exceeds {tol:g}")
    return divergence(upwind_flux(f, u))


def advect_velocity(u: VectorField, w: VectorField) -> VectorField:
    """First-order upwind (w . grad) u for every MAC component"""
    grid = u.grid
    comps = []
    for i in range(grid.dim):
        ui = u.components[i]
        tendency = np.zeros_like(ui)
        for j in range(grid.dim):
            wj = interpolate_component(w, j, i)
            ghost = "edge" if j == i else "odd"
            prev, nxt = neighbors(ui, j, grid.periodic, ghost)
            h = grid.spacing[j]
            backward = (ui - prev) / h
            forward = (nxt - ui) / h
            tendency += wj * np.where(wj > 0.0, backward, forward)
        if not grid.periodic:
            zero_walls(tendency, i)
        comps.append(tendency)
    return VectorField(grid, tuple(comps))
