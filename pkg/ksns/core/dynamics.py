"""
Time stepping for the regularized chemotaxis-fluid system

One step is an IMEX splitting: explicit conservative density update,
implicit signal diffusion with explicit transport, Chorin splitting for the
velocity with Yosida-smoothed convection.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from ksns.core.elliptic import (
    SolverSettings,
    project_divergence_free,
    solve_helmholtz,
    stokes_helmholtz,
    yosida_resolvent,
)
from ksns.core.errors import (
    BlowUpSuspected,
    DimensionMismatch,
    KsnsError,
    NonPhysicalDensity,
    NotDivergenceFree,
    PositivityViolation,
    RunAborted,
    StalledStep,
    ValidationError,
)
from ksns.core.mesh import (
    FaceFlux,
    Grid,
    ScalarField,
    VectorField,
    clamp_roundoff,
    zero_walls,
)
from ksns.core.operators import (
    DIVERGENCE_TOL,
    advect_scalar,
    advect_velocity,
    cells_to_faces,
    chemotaxis_flux,
    divergence,
    divergence_defect,
    gradient,
    porous_medium_flux,
)

logger = logging.getLogger(__name__)


# ============================================================================
# PARAMETERS
# ============================================================================

class LinearPotential(BaseModel):
    """phi(x) = g . x"""

    model_config = ConfigDict(frozen=True)

    g: Tuple[float, ...]

    @model_validator(mode="after")
    def check_finite(self):
        if not all(np.isfinite(self.g)):
            raise ValidationError("params.phi_g", "must be finite")
        return self

    def face_gradient(self, grid: Grid) -> FaceFlux:
        if len(self.g) != grid.dim:
            raise DimensionMismatch(f"phi_g has {len(self.g)} entries for a {grid.dim}-d grid")
        return FaceFlux(
            grid, tuple(np.full(grid.face_shape(a), float(self.g[a])) for a in range(grid.dim))
        ).with_walls_zeroed()


class SampledPotential(BaseModel):
    """phi given at cell centres"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sample: ScalarField

    @model_validator(mode="after")
    def check_finite(self):
        if not np.all(np.isfinite(self.sample.values)):
            raise ValidationError("params.phi_file", "sampled potential must be finite")
        return self

    def face_gradient(self, grid: Grid) -> FaceFlux:
        if self.sample.grid.shape != grid.shape:
            raise DimensionMismatch(f"sampled phi shape {self.sample.grid.shape} != grid {grid.shape}")
        return gradient(self.sample)


Potential = Union[LinearPotential, SampledPotential]


class ModelParams(BaseModel):
    """Physical parameters of one run"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    m: float
    kappa: float
    eps: float
    phi: Potential
    viscosity: float = 1.0
    n_ceiling: float = 1e8
    chemotaxis: bool = True
    freeze_signal: bool = False

    @model_validator(mode="after")
    def check_ranges(self):
        if not np.isfinite(self.m) or self.m <= 1.0:
            raise ValidationError("params.m", "must exceed 1")
        if not 0.0 < self.eps <= 1.0:
            raise ValidationError("params.eps", "must lie in (0, 1]")
        if not np.isfinite(self.kappa):
            raise ValidationError("params.kappa", "must be finite")
        if self.viscosity != 1.0:
            raise ValidationError("params.viscosity", "is fixed at 1.0")
        if not self.n_ceiling > 0.0:
            raise ValidationError("params.n_ceiling", "must be positive")
        return self

    @property
    def warnings(self) -> List[str]:
        if self.m <= 2.0:
            return [f"m = {self.m:g} <= 2: only conservation and positivity are monitored"]
        return []


class StepControl(BaseModel):
    """Step-size policy"""

    model_config = ConfigDict(frozen=True)

    dt: Optional[float] = None
    cfl_advect: float = 0.4
    cfl_diffuse: float = 0.25
    dt_max: float = 1e-2
    dt_min: float = 1e-10

    @model_validator(mode="after")
    def check_ranges(self):
        if not 0.0 < self.cfl_advect <= 1.0:
            raise ValidationError("stepping.cfl_advect", "must lie in (0, 1]")
        if not 0.0 < self.cfl_diffuse <= 0.5:
            raise ValidationError("stepping.cfl_diffuse", "must lie in (0, 0.5]")
        if self.cfl_advect + self.cfl_diffuse > 1.0:
            raise ValidationError("stepping.cfl_advect", "cfl_advect + cfl_diffuse must not exceed 1")
        if not 0.0 < self.dt_min <= self.dt_max:
            raise ValidationError("stepping.dt_min", "need 0 < dt_min <= dt_max")
        if self.dt is not None and not self.dt_min <= self.dt <= self.dt_max:
            raise ValidationError("stepping.dt", "need dt_min <= dt <= dt_max")
        return self

    @property
    def nominal_dt(self) -> float:
        return self.dt if self.dt is not None else self.dt_max


# ============================================================================
# STATE
# ============================================================================

@dataclass(eq=False)
class State:
    n: ScalarField
    c: ScalarField
    u: VectorField
    p: ScalarField
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.n.grid

    @classmethod
    def rest(cls, grid: Grid, t: float = 0.0) -> "State":
        return cls(ScalarField.zeros(grid), ScalarField.zeros(grid), VectorField.zeros(grid),
                   ScalarField.zeros(grid), t)

    def copy(self) -> "State":
        return State(self.n.copy(), self.c.copy(), self.u.copy(), self.p.copy(), self.t)

    def validate(self, div_tol: float = DIVERGENCE_TOL) -> "State":
        """Check finiteness, signs and incompressibility"""
        self.n.check_finite("n")
        self.c.check_finite("c")
        self.u.check_finite("u")
        self.p.check_finite("p")
        clamp_roundoff(self.n.values, NonPhysicalDensity, "n")
        clamp_roundoff(self.c.values, NonPhysicalDensity, "c")
        defect = divergence_defect(self.u)
        if defect > div_tol:
            raise NotDivergenceFree(f"u has scaled divergence {defect:.3e}")
        return self


# ============================================================================
# STEP SIZE
# ============================================================================

def velocity_scale(state: State, params: ModelParams) -> float:
    """Sum over axes of the advective plus chemotactic speed"""
    total = sum(float(np.max(np.abs(comp))) for comp in state.u.components)
    if params.chemotaxis:
        grad_c = gradient(state.c)
        total += sum(float(np.max(np.abs(comp))) for comp in grad_c.components)
    return total


def compute_dt(state: State, params: ModelParams, ctl: StepControl) -> float:
    grid = state.grid
    h = grid.min_spacing
    d_max = params.m * (float(np.max(state.n.values)) + params.eps) ** (params.m - 1.0)
    diffusive = ctl.cfl_diffuse * h * h / (2.0 * grid.dim * d_max)
    speed = velocity_scale(state, params)
    advective = ctl.cfl_advect * h / (2.0 * speed) if speed > 0.0 else np.inf
    dt = min(advective, diffusive, ctl.nominal_dt, ctl.dt_max)
    if dt < ctl.dt_min:
        raise StalledStep(
            f"dt {dt:.3e} below dt_min {ctl.dt_min:.3e} (advective {advective:.3e}, diffusive {diffusive:.3e})"
        )
    return float(dt)


# ============================================================================
# ONE STEP
# ============================================================================

def update_density(state: State, params: ModelParams, dt: float) -> ScalarField:
    n = state.n
    tendency = divergence(porous_medium_flux(n, params.eps, params.m)).values
    if params.chemotaxis:
        tendency = tendency - divergence(chemotaxis_flux(n, state.c)).values
    tendency = tendency - advect_scalar(n, state.u).values
    n_new = clamp_roundoff(n.values + dt * tendency, PositivityViolation, "n")
    if float(np.max(n_new)) > params.n_ceiling:
        raise BlowUpSuspected(f"max n = {float(np.max(n_new)):.3e} exceeds ceiling {params.n_ceiling:.3e}")
    return ScalarField(n.grid, n_new)


def update_signal(state: State, n_new: ScalarField, dt: float, settings: SolverSettings) -> ScalarField:
    """(1 + dt - dt lap) c+ = c + dt (n+ - div(u c)), scaled by 1/(1+dt)"""
    c = state.c
    rhs = (c.values + dt * (n_new.values - advect_scalar(c, state.u).values)) / (1.0 + dt)
    c_new = solve_helmholtz(ScalarField(c.grid, rhs), dt / (1.0 + dt), settings.tightened(1e-12))
    return ScalarField(c.grid, clamp_roundoff(c_new.values, PositivityViolation, "c"))


def update_velocity(state: State, n_new: ScalarField, params: ModelParams, dt: float,
                     settings: SolverSettings) -> Tuple[VectorField, ScalarField]:
    grid = state.grid
    u = state.u
    grad_phi = params.phi.face_gradient(grid)
    convection = None
    if params.kappa != 0.0:
        w = yosida_resolvent(u, params.eps, settings)
        convection = advect_velocity(u, w)
    comps = []
    for axis in range(grid.dim):
        forcing = cells_to_faces(n_new.values, axis, grid) * grad_phi.components[axis]
        if convection is not None:
            forcing = forcing - params.kappa * convection.components[axis]
        comp = u.components[axis] + dt * forcing
        if not grid.periodic:
            zero_walls(comp, axis)
        comps.append(comp)
    u_star = stokes_helmholtz(VectorField(grid, tuple(comps)), dt * params.viscosity, settings)
    u_new, phi_p = project_divergence_free(u_star, settings)
    return u_new, ScalarField(grid, phi_p.values / dt)


def step(state: State, params: ModelParams, ctl: StepControl, settings: SolverSettings,
         dt: Optional[float] = None) -> State:
    """Advance one step; ``dt`` defaults to compute_dt"""
    if dt is None:
        dt = compute_dt(state, params, ctl)
    n_new = update_density(state, params, dt)
    if params.freeze_signal:
        c_new = state.c.copy()
    else:
        c_new = update_signal(state, n_new, dt, settings)
    u_new, p_new = update_velocity(state, n_new, params, dt, settings)
    return State(n_new, c_new, u_new, p_new, state.t + dt)


# ============================================================================
# RUN LOOP
# ============================================================================

@dataclass
class Hook:
    """Callback fired at t0 and then every ``every`` time units (every step if 0)

    The callback receives the state and the time elapsed since its previous call.
    """

    callback: Callable[[State, float], None]
    every: float = 0.0
    next_time: float = field(default=np.inf, init=False)
    last_time: float = field(default=0.0, init=False)

    def start(self, state: State) -> None:
        self.last_time = state.t
        self.next_time = state.t + self.every if self.every > 0.0 else np.inf
        self.callback(state, 0.0)

    def due(self, t: float, tol: float) -> bool:
        return self.every <= 0.0 or t >= self.next_time - tol

    def fire(self, state: State) -> None:
        elapsed = state.t - self.last_time
        self.last_time = state.t
        if self.every > 0.0:
            while self.next_time <= state.t + 1e-12 * max(1.0, abs(state.t)):
                self.next_time += self.every
        self.callback(state, elapsed)


def run(initial: State, params: ModelParams, ctl: StepControl, t_end: float,
        settings: Optional[SolverSettings] = None, hooks: Sequence[Hook] = ()) -> State:
    """Integrate to ``t_end``, landing exactly on every hook output time"""
    settings = settings or SolverSettings()
    initial.validate()
    for message in params.warnings:
        logger.warning(message)
    tol = 1e-12 * max(1.0, abs(t_end))
    state = initial
    for hook in hooks:
        hook.start(state)
    if t_end <= state.t + tol:
        return state

    logger.info(f"run: t={state.t:g} -> {t_end:g}, grid {state.grid.cells}, m={params.m:g}, eps={params.eps:g}")
    step_index = 0
    while state.t < t_end - tol:
        target = min([t_end] + [h.next_time for h in hooks])
        try:
            dt = compute_dt(state, params, ctl)
            landing = dt >= target - state.t - tol
            if landing:
                dt = target - state.t
            new_state = step(state, params, ctl, settings, dt=dt)
        except KsnsError as exc:
            logger.error(f"❌ run aborted at step {step_index}, t={state.t:.6g}: {exc}")
            raise RunAborted(step_index, state.t, exc) from exc
        if landing:
            new_state = replace(new_state, t=target)
        state = new_state
        step_index += 1
        for hook in hooks:
            if hook.due(state.t, tol):
                hook.fire(state)
        if step_index % 1000 == 0:
            logger.info(f"step {step_index}: t={state.t:.6g}, dt={dt:.3e}, max n={float(np.max(state.n.values)):.4g}")

    for hook in hooks:
        if hook.every > 0.0 and hook.last_time < state.t - tol:
            hook.fire(state)
    logger.info(f"✅ run finished: {step_index} steps, t={state.t:g}")
    return state
