"""
Scripted studies

- epsilon_sweep: successive differences of the solution as eps decreases
- manufactured_convergence: grid refinement against known solutions
- m_threshold_scan: run outcomes across diffusion exponents
- decoupling_check: density independent of the signal when chemotaxis is off

Independent runs go to a thread pool; reports are assembled in plan order.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from ksns.api.config_file import RunConfig, build_initial_state, parse_config
from ksns.core.config import get_settings
from ksns.core.dynamics import Hook, ModelParams, State, run
from ksns.core.errors import KsnsError, RunAborted, StudyRunError, ValidationError
from ksns.core.mesh import FaceField, Grid, ScalarField, face_l2_norm, l2_norm, pairwise_sum
from ksns.services.diagnostics import DiagnosticsRecord, DiagnosticsRecorder

logger = logging.getLogger(__name__)

FIELDS = ("n", "c", "u")


# ============================================================================
# RUN HELPER
# ============================================================================

@dataclass
class RunResult:
    final: State
    records: List[DiagnosticsRecord] = field(default_factory=list)
    snapshots: List[State] = field(default_factory=list)


def run_scenario(cfg: RunConfig, params: Optional[ModelParams] = None, t_end: Optional[float] = None,
                 record_every: Optional[float] = None, snapshot_every: Optional[float] = None,
                 ctl_overrides: Optional[Dict[str, float]] = None, grid: Optional[Grid] = None,
                 extra_hooks: Sequence[Hook] = ()) -> RunResult:
    """Run one configuration, optionally recording diagnostics and keeping snapshots"""
    grid = grid or cfg.make_grid()
    params = params or cfg.model_params(grid)
    initial = build_initial_state(cfg, grid)
    ctl = cfg.step_control(**(ctl_overrides or {}))
    t_end = cfg.stepping.t_end if t_end is None else t_end

    hooks: List[Hook] = list(extra_hooks)
    recorder = None
    if record_every is not None:
        recorder = DiagnosticsRecorder(params, record_every)
        hooks.extend(recorder.hooks())
    snapshots: List[State] = []
    if snapshot_every is not None:
        hooks.append(Hook(lambda state, _: snapshots.append(state), snapshot_every))

    final = run(initial, params, ctl, t_end, cfg.solver_settings(), hooks)
    return RunResult(final, recorder.records if recorder else [], snapshots)


def _pool_map(fn: Callable, items: Sequence, workers: Optional[int]) -> List:
    workers = workers or get_settings().WORKERS
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ============================================================================
# NORMS
# ============================================================================

class CompareNorm(str, Enum):
    L2 = "L2"
    L1 = "L1"


def scalar_distance(a: ScalarField, b: ScalarField, norm: CompareNorm) -> float:
    diff = ScalarField(a.grid, a.values - b.values)
    if norm is CompareNorm.L1:
        return pairwise_sum(np.abs(diff.values)) * a.grid.cell_volume
    return l2_norm(diff)


def vector_distance(a: FaceField, b: FaceField, norm: CompareNorm) -> float:
    diff = FaceField(a.grid, tuple(x - y for x, y in zip(a.components, b.components)))
    if norm is CompareNorm.L1:
        return sum(pairwise_sum(np.abs(c)) for c in diff.components) * a.grid.cell_volume
    return face_l2_norm(diff)


def state_distance(a: State, b: State, name: str, norm: CompareNorm) -> float:
    if name == "u":
        return vector_distance(a.u, b.u, norm)
    return scalar_distance(getattr(a, name), getattr(b, name), norm)


# ============================================================================
# EPSILON SWEEP
# ============================================================================

class SweepPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    eps_list: Tuple[float, ...]
    scenario: RunConfig
    compare_norm: CompareNorm = CompareNorm.L2
    t_compare: float = 1.0
    sample_every: Optional[float] = None

    @model_validator(mode="after")
    def check_eps(self):
        if not self.eps_list:
            raise ValidationError("sweep.eps", "needs at least one value")
        if any(not 0.0 < e <= 1.0 for e in self.eps_list):
            raise ValidationError("sweep.eps", "values must lie in (0, 1]")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValidationError("sweep.eps", "must be strictly decreasing")
        if not self.t_compare > 0.0:
            raise ValidationError("sweep.t_compare", "must be positive")
        return self


@dataclass
class SweepReport:
    eps_list: List[float]
    differences: Dict[str, List[float]]
    spacetime: Dict[str, List[float]]
    rates: Dict[str, List[float]]
    tolerance: float
    passed: bool

    HEADER = ["eps_a", "eps_b", "d_n", "d_c", "d_u", "st_n", "st_c", "st_u", "rate_n", "rate_c", "rate_u"]

    def rows(self) -> List[List[float]]:
        out = []
        for j in range(len(self.eps_list) - 1):
            row = [self.eps_list[j], self.eps_list[j + 1]]
            row += [self.differences[f][j] for f in FIELDS]
            row += [self.spacetime[f][j] for f in FIELDS]
            row += [self.rates[f][j] for f in FIELDS]
            out.append(row)
        return out


def _nonincreasing(values: Sequence[float], tolerance: float) -> bool:
    return all(b <= (1.0 + tolerance) * a for a, b in zip(values, values[1:]))


def epsilon_sweep(plan: SweepPlan, workers: Optional[int] = None) -> SweepReport:
    """Run the scenario at every eps and compare consecutive solutions at t_compare"""
    cfg = plan.scenario
    grid = cfg.make_grid()
    every = plan.sample_every or plan.t_compare / 10.0

    def one(eps: float) -> RunResult:
        logger.info(f"sweep: eps={eps:g}")
        try:
            return run_scenario(cfg, params=cfg.model_params(grid, eps=eps), t_end=plan.t_compare,
                                snapshot_every=every, grid=grid)
        except KsnsError as exc:
            raise StudyRunError(f"eps={eps:g}", exc) from exc

    results = _pool_map(one, list(plan.eps_list), workers)

    differences = {f: [] for f in FIELDS}
    spacetime = {f: [] for f in FIELDS}
    rates = {f: [] for f in FIELDS}
    for j in range(len(results) - 1):
        a, b = results[j], results[j + 1]
        for name in FIELDS:
            differences[name].append(state_distance(a.final, b.final, name, plan.compare_norm))
            total = 0.0
            pairs = list(zip(a.snapshots, b.snapshots))
            for (sa, sb), (na, _) in zip(pairs, pairs[1:]):
                total += (na.t - sa.t) * state_distance(sa, sb, name, CompareNorm.L2) ** 2
            spacetime[name].append(math.sqrt(total))
    for name in FIELDS:
        d = differences[name]
        for j in range(len(d) - 1):
            ratio = plan.eps_list[j] / plan.eps_list[j + 1]
            rates[name].append(math.log(d[j] / d[j + 1]) / math.log(ratio) if d[j] > 0 and d[j + 1] > 0 else float("nan"))
        rates[name].append(float("nan"))

    tolerance = get_settings().SWEEP_TOLERANCE
    passed = all(_nonincreasing(differences[f], tolerance) for f in FIELDS)
    logger.info(f"{'✅' if passed else '❌'} eps sweep over {list(plan.eps_list)}")
    return SweepReport(list(plan.eps_list), differences, spacetime, rates, tolerance, passed)


# ============================================================================
# MANUFACTURED CONVERGENCE
# ============================================================================

class ManufacturedCase(str, Enum):
    HEAT = "heat"
    POROUS_MEDIUM = "porous_medium"
    TAYLOR_GREEN = "taylor_green"


# case -> (t_end, dt0 / h0^2, order threshold)
CASE_SETTINGS = {
    ManufacturedCase.HEAT: (0.05, 0.512, 1.8),
    ManufacturedCase.POROUS_MEDIUM: (1e-3, 6.4e-3, 1.5),
    ManufacturedCase.TAYLOR_GREEN: (0.05, 1.024, 1.8),
}
DECAY_RATE_TOL = 0.02


def manufactured_config(case: ManufacturedCase, cells: int) -> RunConfig:
    """Built-in scenario for one refinement level"""
    t_end = CASE_SETTINGS[case][0]
    boundary = "periodic" if case is ManufacturedCase.TAYLOR_GREEN else "no_flux_no_slip"
    lines = [
        "grid.dim = 2",
        f"grid.cells = {cells}, {cells}",
        "grid.lengths = 1.0, 1.0",
        f"grid.boundary = {boundary}",
        "params.m = 3",
        "params.kappa = 0",
        "params.eps = 1e-2",
        "params.phi = linear",
        "params.phi_g = 0, 0",
        "params.chemotaxis = false",
        f"stepping.t_end = {t_end!r}",
        f"output.snapshot_every = {t_end!r}",
        f"output.diagnostics_every = {t_end!r}",
        "output.out_dir = out/convergence",
    ]
    cosine = ["preset = cosine", "amplitude = 0.5", "offset = 1.0", "modes = 1, 1"]
    if case is ManufacturedCase.HEAT:
        lines += ["initial.n.preset = rest"] + [f"initial.c.{item}" for item in cosine] + ["initial.u.preset = rest"]
    elif case is ManufacturedCase.POROUS_MEDIUM:
        lines += [f"initial.n.{item}" for item in cosine] + ["initial.c.preset = rest", "initial.u.preset = rest"]
    else:
        lines += ["initial.n.preset = rest", "initial.c.preset = rest",
                  "initial.u.preset = taylor_green", "initial.u.amplitude = 1.0"]
    return parse_config("\n".join(lines))


def heat_solution(grid: Grid, t: float) -> np.ndarray:
    """c = e^-t + 0.5 cos(pi x) cos(pi y) e^-(1 + 2 pi^2) t on the unit square"""
    x, y = grid.cell_coordinates()
    return np.exp(-t) + 0.5 * np.cos(np.pi * x) * np.cos(np.pi * y) * np.exp(-(1.0 + 2.0 * np.pi ** 2) * t)


def taylor_green_solution(grid: Grid, t: float, amplitude: float = 1.0) -> FaceField:
    k = 2.0 * np.pi
    decay = amplitude * np.exp(-2.0 * k * k * t)
    return FaceField.from_functions(grid, [
        lambda x, y: decay * np.sin(k * x) * np.cos(k * y),
        lambda x, y: -decay * np.cos(k * x) * np.sin(k * y),
    ])


def restrict(values: np.ndarray) -> np.ndarray:
    """Average each block of 2^d fine cells onto its coarse parent"""
    shape = []
    for size in values.shape:
        shape += [size // 2, 2]
    return values.reshape(shape).mean(axis=tuple(range(1, 2 * values.ndim, 2)))


@dataclass
class ConvergenceLevel:
    cells: int
    h: float
    dt: float
    error: float


@dataclass
class ConvergenceReport:
    case: ManufacturedCase
    levels: List[ConvergenceLevel]
    orders: List[float]
    threshold: float
    decay_rate: Optional[float] = None
    expected_decay_rate: Optional[float] = None
    passed: bool = True

    HEADER = ["cells", "h", "dt", "error", "order"]

    def rows(self) -> List[List[float]]:
        orders = [float("nan")] + self.orders
        return [[lv.cells, lv.h, lv.dt, lv.error, orders[i]] for i, lv in enumerate(self.levels)]


def manufactured_convergence(case, levels: int, base_cells: int = 16,
                             workers: Optional[int] = None) -> ConvergenceReport:
    """Refine (h, dt) -> (h/2, dt/4) ``levels`` times and fit the observed order"""
    case = ManufacturedCase(case)
    if levels < 1:
        raise ValidationError("convergence.levels", "must be >= 1")
    t_end, dt_scale, threshold = CASE_SETTINGS[case]
    h0 = 1.0 / base_cells
    runs = levels + 1 if case is ManufacturedCase.POROUS_MEDIUM else levels

    def one(level: int) -> Tuple[RunConfig, RunResult, float]:
        cells = base_cells * 2 ** level
        dt = dt_scale * h0 * h0 / 4 ** level
        cfg = manufactured_config(case, cells)
        grid = cfg.make_grid()
        extra = {"freeze_signal": True} if case is ManufacturedCase.POROUS_MEDIUM else {}
        logger.info(f"convergence {case.value}: {cells} cells, dt={dt:.3e}")
        try:
            result = run_scenario(cfg, params=cfg.model_params(grid, **extra),
                                  ctl_overrides={"dt_max": dt, "dt": dt, "dt_min": min(1e-10, dt)}, grid=grid)
        except KsnsError as exc:
            raise StudyRunError(f"{case.value} level {level}", exc) from exc
        return cfg, result, dt

    outcomes = _pool_map(one, list(range(runs)), workers)

    report_levels = []
    for level in range(levels):
        cfg, result, dt = outcomes[level]
        grid = result.final.grid
        if case is ManufacturedCase.HEAT:
            error = l2_norm(ScalarField(grid, result.final.c.values - heat_solution(grid, t_end)))
        elif case is ManufacturedCase.TAYLOR_GREEN:
            error = vector_distance(result.final.u, taylor_green_solution(grid, t_end), CompareNorm.L2)
        else:
            finer = outcomes[level + 1][1].final.n.values
            error = l2_norm(ScalarField(grid, result.final.n.values - restrict(finer)))
        report_levels.append(ConvergenceLevel(grid.cells[0], grid.spacing[0], dt, error))

    orders = [
        math.log2(a.error / b.error) if a.error > 0 and b.error > 0 else float("nan")
        for a, b in zip(report_levels, report_levels[1:])
    ]
    passed = all(o >= threshold for o in orders)
    report = ConvergenceReport(case, report_levels, orders, threshold)
    if case is ManufacturedCase.TAYLOR_GREEN:
        finest = outcomes[levels - 1][1].final
        initial = build_initial_state(outcomes[levels - 1][0], finest.grid)
        report.decay_rate = -math.log(face_l2_norm(finest.u) / face_l2_norm(initial.u)) / t_end
        report.expected_decay_rate = 2.0 * (2.0 * np.pi) ** 2
        passed = passed and abs(report.decay_rate / report.expected_decay_rate - 1.0) <= DECAY_RATE_TOL
    report.passed = passed
    logger.info(f"{'✅' if passed else '❌'} convergence {case.value}: orders {[round(o, 3) for o in orders]}")
    return report


# ============================================================================
# M THRESHOLD SCAN
# ============================================================================

@dataclass
class ScanRow:
    m: float
    outcome: str
    t_reached: float
    final_max_n: float
    energy_initial: float
    energy_max: float
    energy_final: float

    HEADER = ["m", "outcome", "t_reached", "final_max_n", "energy_initial", "energy_max", "energy_final"]

    def as_row(self) -> list:
        return [self.m, self.outcome, self.t_reached, self.final_max_n,
                self.energy_initial, self.energy_max, self.energy_final]


def m_threshold_scan(m_list: Sequence[float], cfg: RunConfig, workers: Optional[int] = None) -> List[ScanRow]:
    """Descriptive scan; per-run failures are captured as outcomes"""
    grid = cfg.make_grid()
    params = [cfg.model_params(grid, m=m) for m in m_list]
    every = cfg.output.diagnostics_every

    def one(p: ModelParams) -> ScanRow:
        logger.info(f"scan: m={p.m:g}")
        recorder = DiagnosticsRecorder(p, every)
        state = build_initial_state(cfg, grid)
        outcome, t_reached, final = "completed", cfg.stepping.t_end, state
        try:
            final = run(state, p, cfg.step_control(), cfg.stepping.t_end, cfg.solver_settings(), recorder.hooks())
        except RunAborted as exc:
            outcome, t_reached = type(exc.cause).__name__, exc.time
            logger.warning(f"scan: m={p.m:g} stopped at t={exc.time:.4g} with {outcome}")
        energies = [r.energy_coupled for r in recorder.records] or [float("nan")]
        max_n = recorder.records[-1].max_n if recorder.records else float(np.max(final.n.values))
        return ScanRow(p.m, outcome, t_reached, max_n, energies[0], max(energies), energies[-1])

    return _pool_map(one, params, workers)


# ============================================================================
# DECOUPLING
# ============================================================================

@dataclass
class DecouplingReport:
    max_difference: float
    tolerance: float
    passed: bool


def decoupling_check(cfg: RunConfig, t_end: Optional[float] = None, tolerance: float = 1e-13) -> DecouplingReport:
    """With chemotaxis off, n must not depend on whether the signal evolves"""
    grid = cfg.make_grid()
    free = run_scenario(cfg, params=cfg.model_params(grid, chemotaxis=False), t_end=t_end, grid=grid)
    frozen = run_scenario(cfg, params=cfg.model_params(grid, chemotaxis=False, freeze_signal=True),
                          t_end=t_end, grid=grid)
    diff = float(np.max(np.abs(free.final.n.values - frozen.final.n.values)))
    return DecouplingReport(diff, tolerance, diff <= tolerance)
