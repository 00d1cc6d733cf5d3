"""
Linear solvers and the structural operators of the fluid part

Matrix-free conjugate gradient (scipy) on the (semi)definite operators -lap and
(I - alpha lap); the Leray projection and the Yosida resolvent
(1 + eps A)^-1 are built on top of them.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.sparse.linalg import LinearOperator, cg

from ksns.core.errors import IncompatibleRHS, NoConvergence, NotDivergenceFree, ValidationError
from ksns.core.mesh import (
    Grid,
    ScalarField,
    VectorField,
    integrate,
    l2_norm,
    pairwise_sum,
)
from ksns.core.operators import (
    DIVERGENCE_TOL,
    component_laplacian,
    divergence,
    divergence_defect,
    gradient,
    laplacian,
)

logger = logging.getLogger(__name__)

COMPATIBILITY_TOL = 1e-10


class SolverMethod(str, Enum):
    CONJUGATE_GRADIENT = "conjugate_gradient"


class SolverSettings(BaseModel):
    """Tolerances for every linear solve"""

    model_config = ConfigDict(frozen=True)

    tol_rel: float = 1e-8
    tol_abs: float = 1e-12
    max_iter: Optional[int] = None
    method: SolverMethod = SolverMethod.CONJUGATE_GRADIENT

    @model_validator(mode="after")
    def check_ranges(self):
        if not 0.0 < self.tol_rel <= 1e-2:
            raise ValidationError("solver.tol_rel", "must lie in (0, 1e-2]")
        if not self.tol_abs >= 0.0:
            raise ValidationError("solver.tol_abs", "must be >= 0")
        if self.max_iter is not None and self.max_iter < 10:
            raise ValidationError("solver.max_iter", "must be >= 10")
        return self

    def iteration_cap(self, grid: Grid) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return default_max_iter(grid)

    def tightened(self, tol_rel: float) -> "SolverSettings":
        return self.model_copy(update={"tol_rel": min(self.tol_rel, tol_rel)})


def default_max_iter(grid: Grid) -> int:
    """10 N per dimension, N the geometric-mean cell count"""
    n = int(round(grid.num_cells ** (1.0 / grid.dim)))
    return max(10, 10 * n * grid.dim)


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    target: float


# ============================================================================
# CONJUGATE GRADIENT
# ============================================================================

def conjugate_gradient(
    apply_op: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray,
    target: float,
    max_iter: int,
    project_mean: bool = False,
) -> Tuple[np.ndarray, SolveInfo]:
    """Unpreconditioned CG (scipy) until ||b - A x||_2 <= target

    ``apply_op`` acts on arrays shaped like ``b``; it is wrapped as a flat
    LinearOperator. ``project_mean`` restricts the operator and the right-hand
    side to the mean-zero subspace for the singular Neumann/periodic Laplacian.
    """
    shape, size = b.shape, b.size

    def matvec(flat: np.ndarray) -> np.ndarray:
        out = apply_op(np.asarray(flat, dtype=float).reshape(shape)).ravel()
        if project_mean:
            out = out - pairwise_sum(out) / size
        return out

    rhs = b.ravel().astype(float)
    if project_mean:
        rhs = rhs - pairwise_sum(rhs) / size
    x = x0.ravel().astype(float)
    residual = _norm2(rhs - matvec(x))
    if residual <= target:
        return x.reshape(shape), SolveInfo(0, residual, target)

    counter = {"iterations": 0}

    def count(_xk):
        counter["iterations"] += 1

    op = LinearOperator((size, size), matvec=matvec, dtype=float)
    x, status = cg(op, rhs, x0=x, rtol=0.0, atol=target, maxiter=max_iter, callback=count)
    residual = _norm2(rhs - matvec(x))
    if not np.isfinite(residual) or (status != 0 and residual > target):
        raise NoConvergence(counter["iterations"], residual, target)
    return x.reshape(shape), SolveInfo(counter["iterations"], residual, target)


def _norm2(a: np.ndarray) -> float:
    return float(np.sqrt(pairwise_sum(a * a)))


# ============================================================================
# SCALAR SOLVES
# ============================================================================

def solve_poisson_neumann(rhs: ScalarField, settings: SolverSettings,
                          target: Optional[float] = None) -> ScalarField:
    """Solve lap p = rhs with zero-flux (or periodic) boundary, mean-zero gauge"""
    grid = rhs.grid
    rhs.check_finite("poisson rhs")
    mean_defect = abs(integrate(rhs))
    if mean_defect > COMPATIBILITY_TOL * l2_norm(rhs) * np.sqrt(grid.volume):
        raise IncompatibleRHS(f"rhs integrates to {mean_defect:.3e}, expected 0")
    b = rhs.values - pairwise_sum(rhs.values) / rhs.values.size
    if target is None:
        target = settings.tol_rel * _norm2(rhs.values) + settings.tol_abs

    def apply_op(x):
        return -laplacian(ScalarField(grid, x)).values

    x, info = conjugate_gradient(
        apply_op, -b, np.zeros(grid.shape), target, settings.iteration_cap(grid), project_mean=True
    )
    x -= pairwise_sum(x) / x.size
    logger.debug(f"poisson: {info.iterations} iterations, residual {info.residual:.3e}")
    return ScalarField(grid, x)


def solve_helmholtz(f: ScalarField, alpha: float, settings: SolverSettings) -> ScalarField:
    """Solve (I - alpha lap) x = f; an M-matrix, so f >= 0 gives x >= 0"""
    if alpha < 0.0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0.0:
        return f.copy()
    grid = f.grid

    def apply_op(x):
        return x - alpha * laplacian(ScalarField(grid, x)).values

    target = settings.tol_rel * _norm2(f.values) + settings.tol_abs
    x, info = conjugate_gradient(apply_op, f.values, f.values, target, settings.iteration_cap(grid))
    logger.debug(f"helmholtz: {info.iterations} iterations, residual {info.residual:.3e}")
    return ScalarField(grid, x)


def solve_component_helmholtz(a: np.ndarray, axis: int, alpha: float, grid: Grid,
                              settings: SolverSettings) -> np.ndarray:
    """(I - alpha lap) x = a for one MAC component, walls held at 0"""
    if alpha == 0.0:
        return a.copy()

    def apply_op(x):
        return x - alpha * component_laplacian(x, axis, grid)

    target = settings.tol_rel * _norm2(a) + settings.tol_abs
    x, _ = conjugate_gradient(apply_op, a, a, target, settings.iteration_cap(grid))
    return x


# ============================================================================
# FLUID OPERATORS
# ============================================================================

def project_divergence_free(v: VectorField, settings: SolverSettings) -> Tuple[VectorField, ScalarField]:
    """Leray projection: w = v - grad p with div w = 0 to solver precision"""
    grid = v.grid
    v = v.check_finite("projection input").with_walls_zeroed()
    div = divergence(v).values
    # zero net boundary flux: the mean of div is roundoff only
    rhs = ScalarField(grid, div - pairwise_sum(div) / div.size)
    scale = max(1.0, v.max_abs() / grid.min_spacing)
    target = min(
        settings.tol_rel * _norm2(rhs.values) + settings.tol_abs,
        0.1 * DIVERGENCE_TOL * scale,
    )
    p = solve_poisson_neumann(rhs, settings, target=target)
    grad = gradient(p)
    w = VectorField(grid, tuple(vc - gc for vc, gc in zip(v.components, grad.components)))
    return w, p


def stokes_helmholtz(w: VectorField, alpha: float, settings: SolverSettings) -> VectorField:
    """Componentwise (I - alpha lap) solve with no-slip or periodic boundary"""
    grid = w.grid
    comps = tuple(
        solve_component_helmholtz(c, axis, alpha, grid, settings) for axis, c in enumerate(w.components)
    )
    return VectorField(grid, comps)


def yosida_resolvent(w: VectorField, eps: float, settings: SolverSettings) -> VectorField:
    """Y_eps w = (1 + eps A)^-1 w as Helmholtz solve followed by projection"""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    defect = divergence_defect(w)
    if defect > DIVERGENCE_TOL:
        raise NotDivergenceFree(f"yosida input has scaled divergence {defect:.3e}")
    smoothed = stokes_helmholtz(w, eps, settings)
    v, _ = project_divergence_free(smoothed, settings)
    return v
