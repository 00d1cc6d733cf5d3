"""
Monitored functionals and their time integrals

A DiagnosticsRecord holds the instantaneous functionals of one state, the
integrands (``rate_*``) and the accumulated space-time integrals. Accumulators
use the left-endpoint rule: accum(t_k) = accum(t_{k-1}) + dt * rate(t_{k-1}).
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from ksns.core.config import get_settings
from ksns.core.dynamics import Hook, ModelParams, State
from ksns.core.errors import EmptySeries
from ksns.core.mesh import (
    ScalarField,
    clamp_roundoff,
    face_inner,
    face_l2_norm,
    inner,
    integrate,
    lp_norm,
    pairwise_sum,
)
from ksns.core.operators import (
    cells_to_faces,
    chemotaxis_flux,
    divergence_defect,
    faces_to_cells,
    gradient,
    laplacian,
    vector_laplacian,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass_n: float
    mass_c: float
    energy_coupled: float
    lp_n: float
    lp_c: float
    grad_c_l2: float
    grad_u_l2: float
    diss_n_accum: float
    diss_c_accum: float
    diss_u_accum: float
    prod_nc: float
    prod_uc: float
    max_n: float
    min_n: float
    div_u_max: float
    rate_diss_n: float
    rate_diss_c: float
    rate_diss_u: float
    rate_prod_nc: float
    rate_prod_uc: float
    stlp_n_accum: float
    wgrad_c_accum: float
    stlp_c_accum: float
    lap_c_accum: float
    lap_u_accum: float
    holder_nc_bound: float
    rate_stlp_n: float
    rate_wgrad_c: float
    rate_stlp_c: float
    rate_lap_c: float
    rate_lap_u: float

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


# accumulator column -> integrand column
ACCUMULATORS: Dict[str, str] = {
    "diss_n_accum": "rate_diss_n",
    "diss_c_accum": "rate_diss_c",
    "diss_u_accum": "rate_diss_u",
    "prod_nc": "rate_prod_nc",
    "prod_uc": "rate_prod_uc",
    "stlp_n_accum": "rate_stlp_n",
    "wgrad_c_accum": "rate_wgrad_c",
    "stlp_c_accum": "rate_stlp_c",
    "lap_c_accum": "rate_lap_c",
    "lap_u_accum": "rate_lap_u",
}

# checked against the boundedness criteria; the rest are reported only
CHECKED_ACCUMULATORS = ("diss_n_accum", "diss_c_accum", "diss_u_accum", "prod_nc", "prod_uc")
BOUNDED_FUNCTIONALS = ("mass_n", "mass_c", "energy_coupled", "lp_n", "lp_c", "max_n")


# ============================================================================
# EXPONENTS
# ============================================================================

def energy_weight(m: float) -> float:
    """Weight L of the porous term in the coupled energy"""
    return 2.0 * m / (m - 2.0) if m > 2.0 else 1.0


def integrability_exponent(m: float) -> float:
    """8(m-1)/3"""
    return 8.0 * (m - 1.0) / 3.0


def lp_exponent(m: float) -> float:
    """Norm exponent for lp_n/lp_c, held at 1 where 8(m-1)/3 < 1"""
    return max(1.0, integrability_exponent(m))


def flux_exponent(m: float) -> float:
    """8(m-1)/(4m-1)"""
    return 8.0 * (m - 1.0) / (4.0 * m - 1.0)


# ============================================================================
# RECORD
# ============================================================================

def _face_sum(comps) -> float:
    return sum(pairwise_sum(c) for c in comps)


def instantaneous(state: State, params: ModelParams) -> Dict[str, float]:
    """Every functional and integrand of one state"""
    grid = state.grid
    vol = grid.cell_volume
    m, eps = params.m, params.eps
    n = ScalarField(grid, clamp_roundoff(state.n.values, name="n"))
    c = ScalarField(grid, clamp_roundoff(state.c.values, name="c"))
    u = state.u

    grad_n = gradient(n)
    grad_c = gradient(c)
    lap_u = vector_laplacian(u)
    grad_c_sq = face_inner(grad_c, grad_c)
    grad_u_sq = max(0.0, -face_inner(u, lap_u))

    diss_n = []
    wgrad_c = []
    c_power = (8.0 * m - 14.0) / 3.0
    for axis in range(grid.dim):
        nbar = cells_to_faces(n.values, axis, grid)
        diss_n.append((nbar + eps) ** (2.0 * m - 4.0) * grad_n.components[axis] ** 2)
        cbar = cells_to_faces(c.values, axis, grid)
        if c_power < 0.0:
            weight = np.where(cbar > 0.0, np.power(np.where(cbar > 0.0, cbar, 1.0), c_power), 0.0)
        else:
            weight = cbar ** c_power
        wgrad_c.append(weight * grad_c.components[axis] ** 2)

    q = flux_exponent(m)
    flux = chemotaxis_flux(n, c)
    prod_nc = _face_sum(np.abs(comp) ** q for comp in flux.components) * vol

    u_dot_grad_c = np.zeros(grid.shape)
    for axis in range(grid.dim):
        u_dot_grad_c += faces_to_cells(u.components[axis] * grad_c.components[axis], axis, grid)
    prod_uc = pairwise_sum(np.abs(u_dot_grad_c) ** 1.25) * vol

    p_int = integrability_exponent(m)
    p_norm = lp_exponent(m)
    lap_c = laplacian(c)

    return {
        "mass_n": integrate(n),
        "mass_c": integrate(c),
        "energy_coupled": inner(c, c)
        + energy_weight(m) / (m - 1.0) * pairwise_sum((n.values + eps) ** (m - 1.0)) * vol
        + face_inner(u, u),
        "lp_n": lp_norm(n, p_norm),
        "lp_c": lp_norm(c, p_norm),
        "grad_c_l2": math.sqrt(grad_c_sq),
        "grad_u_l2": math.sqrt(grad_u_sq),
        "max_n": float(np.max(n.values)),
        "min_n": float(np.min(state.n.values)),
        "div_u_max": divergence_defect(u),
        "rate_diss_n": _face_sum(diss_n) * vol,
        "rate_diss_c": grad_c_sq,
        "rate_diss_u": grad_u_sq,
        "rate_prod_nc": prod_nc,
        "rate_prod_uc": prod_uc,
        "rate_stlp_n": pairwise_sum(n.values ** p_int) * vol,
        "rate_wgrad_c": _face_sum(wgrad_c) * vol,
        "rate_stlp_c": pairwise_sum(c.values ** (40.0 * (m - 1.0) / 9.0)) * vol,
        "rate_lap_c": inner(lap_c, lap_c),
        "rate_lap_u": face_inner(lap_u, lap_u),
    }


def holder_bound(diss_c: float, stlp_n: float, m: float) -> float:
    """(int int |grad c|^2)^(3/(4m-1)) * (int int n^(8(m-1)/3))^(4(m-1)/(4m-1))"""
    return diss_c ** (3.0 / (4.0 * m - 1.0)) * stlp_n ** (4.0 * (m - 1.0) / (4.0 * m - 1.0))


def record(state: State, params: ModelParams, prev: Optional[DiagnosticsRecord] = None,
           dt_since_prev: float = 0.0) -> DiagnosticsRecord:
    values = instantaneous(state, params)
    for accum, rate in ACCUMULATORS.items():
        if prev is None:
            values[accum] = 0.0
        else:
            values[accum] = getattr(prev, accum) + dt_since_prev * getattr(prev, rate)
    values["holder_nc_bound"] = holder_bound(values["diss_c_accum"], values["stlp_n_accum"], params.m)
    return DiagnosticsRecord(t=float(state.t), **values)


class DiagnosticsRecorder:
    """Accumulate every step, keep a row every ``every`` time units"""

    def __init__(self, params: ModelParams, every: float = 0.0):
        self.params = params
        self.every = every
        self.records: List[DiagnosticsRecord] = []
        self._last: Optional[DiagnosticsRecord] = None

    def _accumulate(self, state: State, elapsed: float) -> None:
        self._last = record(state, self.params, self._last, elapsed)

    def _store(self, state: State, elapsed: float) -> None:
        self.records.append(self._last)

    def hooks(self) -> List[Hook]:
        return [Hook(self._accumulate, 0.0), Hook(self._store, self.every)]


# ============================================================================
# A PRIORI CHECKS
# ============================================================================

@dataclass
class CheckResult:
    name: str
    value: float
    limit: float
    passed: bool


@dataclass
class AccumulatorFit:
    name: str
    intercept: float
    slope: float
    r_squared: float
    nondecreasing: bool


@dataclass
class AprioriReport:
    checks: List[CheckResult]
    fits: Dict[str, AccumulatorFit]
    maxima: Dict[str, float]
    info: Dict[str, float]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]


def fit_accumulator(times: np.ndarray, values: np.ndarray, name: str) -> AccumulatorFit:
    """Linear fit a + b t over the second half of the time window"""
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    nondecreasing = bool(np.all(np.diff(values) >= -1e-14 * max(scale, 1e-300)))
    t_mid = times[0] + 0.5 * (times[-1] - times[0])
    mask = times >= t_mid
    t_fit, v_fit = times[mask], values[mask]
    if t_fit.size < 3 or np.ptp(v_fit) == 0.0:
        span = float(t_fit[-1] - t_fit[0])
        slope = float(v_fit[-1] - v_fit[0]) / span if span > 0.0 else 0.0
        return AccumulatorFit(name, float(v_fit[0]), slope, 1.0, nondecreasing)
    fit = stats.linregress(t_fit, v_fit)
    return AccumulatorFit(name, float(fit.intercept), float(fit.slope), float(fit.rvalue ** 2), nondecreasing)


def check_apriori(series: Sequence[DiagnosticsRecord], params: ModelParams) -> AprioriReport:
    if not series:
        raise EmptySeries("no diagnostics records to check")
    cfg = get_settings()
    first = series[0]
    column = {name: np.array([getattr(r, name) for r in series]) for name in DiagnosticsRecord.field_names()}
    checks: List[CheckResult] = []
    maxima = {name: float(np.max(column[name])) for name in BOUNDED_FUNCTIONALS}

    for name in BOUNDED_FUNCTIONALS:
        limit = cfg.CEILING_FACTOR * abs(getattr(first, name)) + cfg.CEILING_FLOOR
        checks.append(CheckResult(f"{name}_bounded", maxima[name], limit, maxima[name] <= limit))

    drift = float(np.max(np.abs(column["mass_n"] - first.mass_n)))
    drift_limit = cfg.CONSERVATION_RTOL * abs(first.mass_n)
    checks.append(CheckResult("mass_n_conserved", drift, drift_limit, drift <= drift_limit))

    signal_limit = max(first.mass_c, first.mass_n) + cfg.SIGNAL_MASS_ATOL
    checks.append(CheckResult("mass_c_bounded_by_mass", maxima["mass_c"], signal_limit,
                              maxima["mass_c"] <= signal_limit))

    lowest = float(np.min(column["min_n"]))
    checks.append(CheckResult("n_nonnegative", lowest, 0.0, lowest >= 0.0))

    div_max = float(np.max(column["div_u_max"]))
    checks.append(CheckResult("u_divergence_free", div_max, cfg.DIVERGENCE_TOL, div_max <= cfg.DIVERGENCE_TOL))

    times = column["t"]
    fits = {name: fit_accumulator(times, column[name], name) for name in ACCUMULATORS}
    for name in CHECKED_ACCUMULATORS:
        fit = fits[name]
        ok = fit.nondecreasing and np.isfinite(fit.slope) and fit.r_squared >= cfg.FIT_R2_MIN
        checks.append(CheckResult(f"{name}_linear_growth", fit.r_squared, cfg.FIT_R2_MIN, bool(ok)))

    last = series[-1]
    info = {
        "energy_weight": energy_weight(params.m),
        "lp_exponent": lp_exponent(params.m),
        "flux_exponent": flux_exponent(params.m),
        "prod_nc_over_holder": last.prod_nc / last.holder_nc_bound if last.holder_nc_bound > 0 else 0.0,
    }
    report = AprioriReport(checks, fits, maxima, info)
    for check in report.failures():
        logger.warning(f"❌ {check.name}: {check.value:.6g} vs limit {check.limit:.6g}")
    return report
