"""
Weak-formulation residuals over a stored trajectory

Each residual tests a sequence of snapshots against a space-time test
function theta(t) * s(x) and returns |LHS - RHS| divided by the largest
constituent term. Time integrals use the midpoint rule with fields averaged
between consecutive snapshots; the time-derivative term is summed by parts
as -sum (theta(t_{k+1}) - theta(t_k)) <f_mid, s> so that it telescopes
exactly for a conserved quantity.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from ksns.core.dynamics import ModelParams, State
from ksns.core.elliptic import SolverSettings, project_divergence_free, yosida_resolvent
from ksns.core.errors import EmptySeries, IncompatibleTestFunction, ValidationError
from ksns.core.mesh import Grid, ScalarField, VectorField, face_inner, pairwise_sum, zero_walls
from ksns.core.operators import advect_velocity, cells_to_faces, gradient, vector_laplacian

logger = logging.getLogger(__name__)

NEUMANN_TOL = 1e-8


# ============================================================================
# TEST FUNCTIONS
# ============================================================================

class TemporalWindow(BaseModel):
    """C1 time profile: sin^2 bump on [t_start, t_end], or a cos^2 ramp from 1 to 0
    when ``include_initial`` is set"""

    model_config = ConfigDict(frozen=True)

    t_start: float
    t_end: float
    include_initial: bool = False

    @model_validator(mode="after")
    def check_order(self):
        if not self.t_end > self.t_start:
            raise ValidationError("window.t_end", "must exceed t_start")
        return self

    def value(self, t: float) -> float:
        s = (t - self.t_start) / (self.t_end - self.t_start)
        if self.include_initial:
            if s <= 0.0:
                return 1.0
            return math.cos(0.5 * math.pi * s) ** 2 if s < 1.0 else 0.0
        return math.sin(math.pi * s) ** 2 if 0.0 < s < 1.0 else 0.0


class ProductMode(BaseModel, ABC):
    """Separable spatial test function on the box"""

    model_config = ConfigDict(frozen=True)

    modes: Tuple[int, ...]
    amplitude: float = 1.0
    offset: float = 0.0

    def _waves(self, grid: Grid):
        return [k * math.pi / length for k, length in zip(self.modes, grid.lengths)]

    @abstractmethod
    def value(self, grid: Grid, coords) -> np.ndarray:
        ...

    @abstractmethod
    def derivative(self, grid: Grid, coords, axis: int) -> np.ndarray:
        ...

    def laplacian(self, grid: Grid, coords) -> np.ndarray:
        waves = self._waves(grid)
        return -sum(w * w for w in waves) * (self.value(grid, coords) - self.offset)


class CosineMode(ProductMode):
    """offset + amplitude * prod_i cos(k_i pi x_i / L_i); zero normal derivative on walls"""

    def value(self, grid: Grid, coords) -> np.ndarray:
        waves = self._waves(grid)
        out = self.amplitude * np.ones_like(coords[0])
        for w, x in zip(waves, coords):
            out = out * np.cos(w * x)
        return out + self.offset

    def derivative(self, grid: Grid, coords, axis: int) -> np.ndarray:
        waves = self._waves(grid)
        out = self.amplitude * np.ones_like(coords[0])
        for j, (w, x) in enumerate(zip(waves, coords)):
            out = out * (-w * np.sin(w * x) if j == axis else np.cos(w * x))
        return out


class SineMode(ProductMode):
    """amplitude * prod_i sin(k_i pi x_i / L_i); vanishes on walls but its normal
    derivative does not, so it fails the zero-flux compatibility check"""

    def value(self, grid: Grid, coords) -> np.ndarray:
        out = self.amplitude * np.ones_like(coords[0])
        for w, x in zip(self._waves(grid), coords):
            out = out * np.sin(w * x)
        return out + self.offset

    def derivative(self, grid: Grid, coords, axis: int) -> np.ndarray:
        out = self.amplitude * np.ones_like(coords[0])
        for j, (w, x) in enumerate(zip(self._waves(grid), coords)):
            out = out * (w * np.cos(w * x) if j == axis else np.sin(w * x))
        return out


SpatialTest = ProductMode


class ScalarTest(BaseModel):
    model_config = ConfigDict(frozen=True)

    spatial: SpatialTest
    window: TemporalWindow


class CurlMode(BaseModel):
    """Velocity (d_y psi, -d_x psi, 0) of psi = amplitude * prod_i sin(k_i pi x_i / L_i),
    optionally polluted by the gradient of a CosineMode"""

    model_config = ConfigDict(frozen=True)

    modes: Tuple[int, ...]
    amplitude: float = 1.0
    gradient_part: Optional[CosineMode] = None

    def face_values(self, grid: Grid) -> List[np.ndarray]:
        stream = SineMode(modes=self.modes, amplitude=self.amplitude)
        comps = []
        for axis in range(grid.dim):
            coords = grid.face_coordinates(axis)
            if axis == 0:
                comp = stream.derivative(grid, coords, 1)
            elif axis == 1:
                comp = -stream.derivative(grid, coords, 0)
            else:
                comp = np.zeros_like(coords[0])
            if self.gradient_part is not None:
                comp = comp + self.gradient_part.derivative(grid, coords, axis)
            comps.append(comp)
        return comps


class VectorTest(BaseModel):
    model_config = ConfigDict(frozen=True)

    spatial: CurlMode
    window: TemporalWindow


# ============================================================================
# COMPATIBILITY
# ============================================================================

def _wall_coordinates(grid: Grid, axis: int):
    coords = grid.face_coordinates(axis)
    index = [slice(None)] * grid.dim
    walls = []
    for end in (0, -1):
        index[axis] = end
        walls.append(tuple(c[tuple(index)] for c in coords))
    return walls


def check_scalar_compatible(spatial: SpatialTest, grid: Grid) -> None:
    """Zero normal derivative on walls; even modes when periodic"""
    if grid.periodic:
        if any(k % 2 for k in spatial.modes):
            raise IncompatibleTestFunction(f"modes {spatial.modes} are not periodic on the box")
        return
    for axis in range(grid.dim):
        for wall in _wall_coordinates(grid, axis):
            flux = float(np.max(np.abs(spatial.derivative(grid, wall, axis))))
            if flux > NEUMANN_TOL:
                raise IncompatibleTestFunction(f"normal derivative {flux:.3e} on wall of axis {axis}")


def _check_window(window: TemporalWindow, times: Sequence[float]) -> None:
    if not window.include_initial and window.value(times[0]) != 0.0:
        raise IncompatibleTestFunction("temporal window is nonzero at the first snapshot")
    if abs(window.value(times[-1])) > 1e-12:
        raise IncompatibleTestFunction("temporal window does not vanish at the last snapshot")


def _check_snapshots(snapshots: Sequence[State]) -> List[float]:
    if len(snapshots) < 2:
        raise EmptySeries("weak residuals need at least two snapshots")
    times = [float(s.t) for s in snapshots]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("snapshots must be strictly increasing in time")
    return times


# ============================================================================
# QUADRATURE HELPERS
# ============================================================================

def _mid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * (a + b)


def _cell_integral(values: np.ndarray, grid: Grid) -> float:
    return pairwise_sum(values) * grid.cell_volume


def _face_integral(comps: Sequence[np.ndarray], grid: Grid) -> float:
    return sum(pairwise_sum(c) for c in comps) * grid.cell_volume


def _test_gradient_on_faces(spatial: SpatialTest, grid: Grid) -> List[np.ndarray]:
    comps = []
    for axis in range(grid.dim):
        g = spatial.derivative(grid, grid.face_coordinates(axis), axis)
        if not grid.periodic:
            zero_walls(g, axis)
        comps.append(g)
    return comps


def _finish(lhs: float, rhs_terms: List[float], lhs_scale: float, name: str) -> float:
    """|lhs - rhs| relative to the largest single contribution"""
    scale = max([lhs_scale] + [abs(x) for x in rhs_terms])
    if scale == 0.0:
        return 0.0
    residual = abs(lhs - sum(rhs_terms)) / scale
    logger.debug(f"{name} residual {residual:.3e} (scale {scale:.3e})")
    return residual


def _time_terms(snapshots: Sequence[State], window: TemporalWindow, times: Sequence[float],
                pairing: Callable[[State, State], float], initial: Callable[[State], float]) -> Tuple[float, float]:
    """-sum_k (theta_{k+1} - theta_k) <f_mid, s> - theta(t_0) <f_0, s>, and the larger of its two parts"""
    total = 0.0
    for k in range(len(snapshots) - 1):
        d_theta = window.value(times[k + 1]) - window.value(times[k])
        if d_theta != 0.0:
            total -= d_theta * pairing(snapshots[k], snapshots[k + 1])
    start = window.value(times[0]) * initial(snapshots[0])
    return total - start, max(abs(total), abs(start))


# ============================================================================
# RESIDUALS
# ============================================================================

def weak_residual_n(snapshots: Sequence[State], test_fn: ScalarTest, params: ModelParams,
                    regularized: bool = False) -> float:
    """Density identity with the literal n^m; ``regularized`` tests (n+eps)^m - eps^m"""
    times = _check_snapshots(snapshots)
    grid = snapshots[0].grid
    check_scalar_compatible(test_fn.spatial, grid)
    _check_window(test_fn.window, times)

    coords = grid.cell_coordinates()
    s = test_fn.spatial.value(grid, coords)
    lap_s = test_fn.spatial.laplacian(grid, coords)
    grad_s = _test_gradient_on_faces(test_fn.spatial, grid)
    m, eps = params.m, params.eps

    lhs, lhs_scale = _time_terms(
        snapshots, test_fn.window, times,
        lambda a, b: _cell_integral(_mid(a.n.values, b.n.values) * s, grid),
        lambda a: _cell_integral(a.n.values * s, grid),
    )
    diffusion = chemotaxis = transport = 0.0
    for k in range(len(snapshots) - 1):
        a, b = snapshots[k], snapshots[k + 1]
        weight = test_fn.window.value(0.5 * (times[k] + times[k + 1])) * (times[k + 1] - times[k])
        if weight == 0.0:
            continue
        n_mid = np.maximum(_mid(a.n.values, b.n.values), 0.0)
        power = (n_mid + eps) ** m - eps ** m if regularized else n_mid ** m
        diffusion += weight * _cell_integral(power * lap_s, grid)
        grad_c = gradient(ScalarField(grid, _mid(a.c.values, b.c.values)))
        for axis in range(grid.dim):
            nbar = cells_to_faces(n_mid, axis, grid)
            u_mid = _mid(a.u.components[axis], b.u.components[axis])
            if params.chemotaxis:
                chemotaxis += weight * _face_integral([nbar * grad_c.components[axis] * grad_s[axis]], grid)
            transport += weight * _face_integral([nbar * u_mid * grad_s[axis]], grid)
    return _finish(lhs, [diffusion, chemotaxis, transport], lhs_scale, "n")


def weak_residual_c(snapshots: Sequence[State], test_fn: ScalarTest, params: ModelParams) -> float:
    times = _check_snapshots(snapshots)
    grid = snapshots[0].grid
    check_scalar_compatible(test_fn.spatial, grid)
    _check_window(test_fn.window, times)

    coords = grid.cell_coordinates()
    s = test_fn.spatial.value(grid, coords)
    grad_s = _test_gradient_on_faces(test_fn.spatial, grid)

    lhs, lhs_scale = _time_terms(
        snapshots, test_fn.window, times,
        lambda a, b: _cell_integral(_mid(a.c.values, b.c.values) * s, grid),
        lambda a: _cell_integral(a.c.values * s, grid),
    )
    diffusion = decay = source = transport = 0.0
    for k in range(len(snapshots) - 1):
        a, b = snapshots[k], snapshots[k + 1]
        weight = test_fn.window.value(0.5 * (times[k] + times[k + 1])) * (times[k + 1] - times[k])
        if weight == 0.0:
            continue
        c_mid = _mid(a.c.values, b.c.values)
        n_mid = _mid(a.n.values, b.n.values)
        grad_c = gradient(ScalarField(grid, c_mid))
        decay -= weight * _cell_integral(c_mid * s, grid)
        source += weight * _cell_integral(n_mid * s, grid)
        for axis in range(grid.dim):
            u_mid = _mid(a.u.components[axis], b.u.components[axis])
            diffusion -= weight * _face_integral([grad_c.components[axis] * grad_s[axis]], grid)
            transport += weight * _face_integral(
                [cells_to_faces(c_mid, axis, grid) * u_mid * grad_s[axis]], grid
            )
    return _finish(lhs, [diffusion, decay, source, transport], lhs_scale, "c")


def solenoidal_test(spatial: CurlMode, grid: Grid, settings: SolverSettings) -> VectorField:
    """Sample on faces, check wall normals, then project onto divergence-free fields"""
    comps = spatial.face_values(grid)
    if not grid.periodic:
        for axis, comp in enumerate(comps):
            index = [slice(None)] * grid.dim
            for end in (0, -1):
                index[axis] = end
                wall = float(np.max(np.abs(comp[tuple(index)])))
                if wall > NEUMANN_TOL:
                    raise IncompatibleTestFunction(f"test velocity has normal value {wall:.3e} on a wall")
    elif any(k % 2 for k in spatial.modes):
        raise IncompatibleTestFunction(f"modes {spatial.modes} are not periodic on the box")
    filtered, _ = project_divergence_free(VectorField(grid, tuple(comps)), settings)
    return filtered


def weak_residual_u(snapshots: Sequence[State], test_fn: VectorTest, params: ModelParams,
                    regularized: bool = False, settings: Optional[SolverSettings] = None) -> float:
    """Momentum identity against a filtered solenoidal test; the pressure drops out

    With ``regularized`` the convecting velocity is Y_eps u, otherwise u itself.
    """
    settings = settings or SolverSettings()
    times = _check_snapshots(snapshots)
    grid = snapshots[0].grid
    _check_window(test_fn.window, times)
    psi = solenoidal_test(test_fn.spatial, grid, settings)
    lap_psi = vector_laplacian(psi)
    grad_phi = params.phi.face_gradient(grid)

    def mid_u(a: State, b: State) -> VectorField:
        return VectorField(grid, tuple(_mid(x, y) for x, y in zip(a.u.components, b.u.components)))

    lhs, lhs_scale = _time_terms(
        snapshots, test_fn.window, times,
        lambda a, b: face_inner(mid_u(a, b), psi),
        lambda a: face_inner(a.u, psi),
    )
    viscous = convective = buoyancy = 0.0
    for k in range(len(snapshots) - 1):
        a, b = snapshots[k], snapshots[k + 1]
        weight = test_fn.window.value(0.5 * (times[k] + times[k + 1])) * (times[k + 1] - times[k])
        if weight == 0.0:
            continue
        u_mid = mid_u(a, b)
        viscous += weight * params.viscosity * face_inner(u_mid, lap_psi)
        if params.kappa != 0.0:
            carrier = yosida_resolvent(u_mid, params.eps, settings) if regularized else u_mid
            convective -= weight * params.kappa * face_inner(advect_velocity(u_mid, carrier), psi)
        n_mid = _mid(a.n.values, b.n.values)
        buoyancy += weight * _face_integral(
            [cells_to_faces(n_mid, axis, grid) * grad_phi.components[axis] * psi.components[axis]
             for axis in range(grid.dim)], grid
        )
    return _finish(lhs, [viscous, convective, buoyancy], lhs_scale, "u")
