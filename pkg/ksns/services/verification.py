"""
Verification suites behind ``ksns verify <suite>``

Each suite is a list of named checks run through the same tally:
invariants, projection, yosida, conservation.
"""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy import stats

from ksns.core.dynamics import LinearPotential, ModelParams, State, StepControl, step, update_velocity
from ksns.core.elliptic import SolverSettings, project_divergence_free, yosida_resolvent
from ksns.core.mesh import FaceField, ScalarField, VectorField, face_l2_norm, integrate, make_grid
from ksns.core.operators import divergence_defect, gradient
from ksns.api.config_file import curl_of_streamfunction, streamfunction_nodes

logger = logging.getLogger(__name__)

SEED = 20240611


class TestResults:
    """Tally of one suite"""

    def __init__(self):
        self.passed = 0
        self.failed = 0
        self.results: List[Tuple[str, str, str]] = []

    @property
    def ok(self) -> bool:
        return self.failed == 0


def run_test(results: TestResults, name: str, test_func: Callable[[], None]) -> bool:
    """Run a check and track results"""
    try:
        test_func()
        results.passed += 1
        results.results.append((name, "PASS", ""))
        logger.info(f"  ✅ {name}")
        return True
    except AssertionError as e:
        results.failed += 1
        results.results.append((name, "FAIL", str(e)))
        logger.info(f"  ❌ {name}: {e}")
        return False
    except Exception as e:
        results.failed += 1
        results.results.append((name, "ERROR", f"{type(e).__name__}: {e}"))
        logger.info(f"  ❌ {name}: {type(e).__name__}: {e}")
        return False


# ============================================================================
# FIELD GENERATORS
# ============================================================================

def random_face_field(grid, rng: np.random.Generator) -> VectorField:
    comps = tuple(rng.standard_normal(grid.face_shape(a)) for a in range(grid.dim))
    return VectorField(grid, comps).with_walls_zeroed()


def random_solenoidal(grid, rng: np.random.Generator, settings: SolverSettings) -> VectorField:
    w, _ = project_divergence_free(random_face_field(grid, rng), settings)
    return w


def low_mode_solenoidal(grid, rng: np.random.Generator) -> VectorField:
    """Discrete curl of a random combination of the lowest periodic streamfunction modes"""
    x, y = streamfunction_nodes(grid)[:2]
    kx, ky = 2.0 * np.pi / grid.lengths[0], 2.0 * np.pi / grid.lengths[1]
    a = rng.standard_normal(4)
    psi = (a[0] * np.sin(kx * x) + a[1] * np.cos(ky * y)
           + a[2] * np.sin(kx * x) * np.sin(ky * y) + a[3] * np.cos(kx * x) * np.cos(ky * y))
    return curl_of_streamfunction(grid, psi)


def _rest_params(**overrides) -> ModelParams:
    values = dict(m=3.0, kappa=1.0, eps=1e-2, phi=LinearPotential(g=(0.0, -1.0)))
    values.update(overrides)
    return ModelParams(**values)


def _blob_state(grid) -> State:
    n = ScalarField.from_function(grid, lambda x, y: 2.0 * np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.02))
    state = State.rest(grid)
    return State(n, ScalarField.zeros(grid), state.u, state.p, 0.0)


# ============================================================================
# SUITES
# ============================================================================

def invariants_suite(samples: int = 5) -> List[Tuple[str, Callable[[], None]]]:
    grid = make_grid(2, (16, 16), (1.0, 1.0), "no_flux_no_slip")
    settings = SolverSettings()
    ctl = StepControl(dt_max=1e-3)

    def rest_is_fixed_point():
        params = _rest_params()
        state = State.rest(grid)
        new = step(state, params, ctl, settings)
        for name in ("n", "c", "p"):
            assert np.all(getattr(new, name).values == 0.0), f"{name} moved away from rest"
        assert all(np.all(comp == 0.0) for comp in new.u.components), "u moved away from rest"

    def constant_state_reduces_to_ode():
        periodic = make_grid(2, (8, 8), (1.0, 1.0), "periodic")
        params = _rest_params(phi=LinearPotential(g=(0.0, 0.0)))
        state = State(ScalarField.constant(periodic, 2.0), ScalarField.constant(periodic, 0.5),
                      VectorField.zeros(periodic), ScalarField.zeros(periodic))
        dt = 1e-3
        new = step(state, params, ctl, settings, dt=dt)
        assert np.all(new.n.values == 2.0), "constant density changed"
        expected = (0.5 + dt * 2.0) / (1.0 + dt)
        assert np.allclose(new.c.values, expected, rtol=1e-13, atol=0.0), "signal relaxation mismatch"

    def step_keeps_invariants():
        params = _rest_params()
        state = _blob_state(grid)
        mass0 = integrate(state.n)
        for _ in range(samples):
            state = step(state, params, ctl, settings)
            assert abs(integrate(state.n) - mass0) <= 1e-12 * mass0, "mass drift"
            assert float(np.min(state.n.values)) >= 0.0, "negative density"
            assert float(np.min(state.c.values)) >= 0.0, "negative signal"
            assert divergence_defect(state.u) <= 1e-8, "divergent velocity"

    def stokes_limit_ignores_eps():
        state = step(_blob_state(grid), _rest_params(), ctl, settings)
        a, _ = update_velocity(state, state.n, _rest_params(kappa=0.0, eps=1e-1), 1e-4, settings)
        b, _ = update_velocity(state, state.n, _rest_params(kappa=0.0, eps=1e-3), 1e-4, settings)
        for ca, cb in zip(a.components, b.components):
            assert np.array_equal(ca, cb), "kappa = 0 velocity depends on eps"

    return [
        ("Rest state is a fixed point", rest_is_fixed_point),
        ("Constant state follows the signal ODE", constant_state_reduces_to_ode),
        ("Step keeps mass, signs and incompressibility", step_keeps_invariants),
        ("kappa = 0 update is independent of eps", stokes_limit_ignores_eps),
    ]


def projection_suite(samples: int = 20) -> List[Tuple[str, Callable[[], None]]]:
    grid = make_grid(2, (32, 32), (1.0, 1.0), "no_flux_no_slip")
    settings = SolverSettings()
    rng = np.random.default_rng(SEED)

    def divergence_after_projection():
        for _ in range(samples):
            w, _ = project_divergence_free(random_face_field(grid, rng), settings)
            assert divergence_defect(w) <= 1e-8, f"divergence {divergence_defect(w):.3e}"

    def idempotent():
        for _ in range(samples):
            w, _ = project_divergence_free(random_face_field(grid, rng), settings)
            ww, _ = project_divergence_free(w, settings)
            defect = face_l2_norm(FaceField(grid, tuple(a - b for a, b in zip(w.components, ww.components))))
            assert defect <= 10.0 * settings.tol_rel * face_l2_norm(w), f"idempotence defect {defect:.3e}"

    def annihilates_gradients():
        for _ in range(samples):
            q = ScalarField(grid, rng.standard_normal(grid.shape))
            g = gradient(q)
            w, _ = project_divergence_free(VectorField(grid, g.components), settings)
            assert face_l2_norm(w) <= settings.tol_rel * face_l2_norm(g), f"residual {face_l2_norm(w):.3e}"

    return [
        ("Projected fields are divergence-free", divergence_after_projection),
        ("Projection is idempotent", idempotent),
        ("Projection annihilates gradients", annihilates_gradients),
    ]


def yosida_suite(samples: int = 20, cells: int = 64) -> List[Tuple[str, Callable[[], None]]]:
    settings = SolverSettings(tol_rel=1e-12)
    rng = np.random.default_rng(SEED + 1)

    def nonexpansive():
        grid = make_grid(2, (cells // 2, cells // 2), (1.0, 1.0), "no_flux_no_slip")
        for _ in range(samples):
            w = random_solenoidal(grid, rng, settings)
            y = yosida_resolvent(w, 1e-2, settings)
            assert face_l2_norm(y) <= face_l2_norm(w) * (1.0 + 1e-10), "resolvent expanded a field"

    def converges_linearly_in_eps():
        # box side 2 pi keeps eps * lambda small over the whole eps range
        grid = make_grid(2, (cells, cells), (2.0 * np.pi, 2.0 * np.pi), "periodic")
        w = low_mode_solenoidal(grid, rng)
        eps_list = [1e-1, 1e-2, 1e-3, 1e-4]
        gaps = []
        for eps in eps_list:
            y = yosida_resolvent(w, eps, settings)
            gaps.append(face_l2_norm(FaceField(grid, tuple(a - b for a, b in zip(y.components, w.components)))))
        fit = stats.linregress(np.log(eps_list), np.log(gaps))
        assert fit.slope >= 0.9, f"slope {fit.slope:.3f}"

    return [
        ("Yosida resolvent is nonexpansive", nonexpansive),
        ("Yosida resolvent converges as O(eps)", converges_linearly_in_eps),
    ]


def conservation_suite(steps: int = 20) -> List[Tuple[str, Callable[[], None]]]:
    grid = make_grid(2, (16, 16), (1.0, 1.0), "no_flux_no_slip")
    settings = SolverSettings()
    ctl = StepControl(dt_max=1e-3)

    def mass_and_signal_bounds():
        params = _rest_params()
        state = _blob_state(grid)
        mass_n0, mass_c0 = integrate(state.n), integrate(state.c)
        for _ in range(steps):
            state = step(state, params, ctl, settings)
            assert abs(integrate(state.n) - mass_n0) <= 1e-12 * mass_n0, "density mass drift"
            assert integrate(state.c) <= max(mass_c0, mass_n0) + 1e-10, "signal mass above bound"

    def buoyancy_drives_flow():
        state = step(_blob_state(grid), _rest_params(), ctl, settings)
        assert state.u.max_abs() > 0.0, "buoyancy left the fluid at rest"
        assert divergence_defect(state.u) <= 1e-8, "divergent velocity"

    return [
        ("Density mass conserved, signal mass bounded", mass_and_signal_bounds),
        ("Buoyancy forces a divergence-free flow", buoyancy_drives_flow),
    ]


SUITES: Dict[str, Callable[[], List[Tuple[str, Callable[[], None]]]]] = {
    "invariants": invariants_suite,
    "projection": projection_suite,
    "yosida": yosida_suite,
    "conservation": conservation_suite,
}


def run_suite(name: str) -> TestResults:
    tests = SUITES[name]()
    results = TestResults()
    logger.info(f"📋 Running {len(tests)} checks in suite '{name}'...")
    for test_name, test_func in tests:
        run_test(results, test_name, test_func)
    total = results.passed + results.failed
    rate = results.passed / total * 100 if total else 0.0
    logger.info(f"✅ Passed: {results.passed}/{total}   ❌ Failed: {results.failed}/{total}   📈 {rate:.1f}%")
    return results
