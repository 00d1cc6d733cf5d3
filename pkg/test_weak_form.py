"""
Tests for the space-time weak residuals
"""

import numpy as np
import pytest

from ksns.core.dynamics import Hook, StepControl, run
from ksns.core.errors import EmptySeries, IncompatibleTestFunction
from ksns.services.weak_form import (
    CosineMode,
    CurlMode,
    ProductMode,
    ScalarTest,
    SineMode,
    TemporalWindow,
    VectorTest,
    check_scalar_compatible,
    solenoidal_test,
    weak_residual_c,
    weak_residual_n,
    weak_residual_u,
)
from ksns.core.operators import divergence_defect


@pytest.fixture
def snapshots(params, blob_state):
    states = []
    run(blob_state, params, StepControl(), 0.004, hooks=[Hook(lambda s, _: states.append(s), 0.0005)])
    return states


def _window(snapshots, include_initial=True):
    return TemporalWindow(t_start=snapshots[0].t, t_end=snapshots[-1].t, include_initial=include_initial)


def test_window_shapes():
    bump = TemporalWindow(t_start=0.0, t_end=1.0)
    assert bump.value(0.0) == 0.0 and bump.value(0.5) == pytest.approx(1.0) and bump.value(1.0) == 0.0
    ramp = TemporalWindow(t_start=0.0, t_end=1.0, include_initial=True)
    assert ramp.value(0.0) == 1.0 and ramp.value(1.0) == 0.0


def test_zero_test_function_gives_zero(snapshots, params):
    scalar = ScalarTest(spatial=CosineMode(modes=(1, 1), amplitude=0.0), window=_window(snapshots))
    assert weak_residual_n(snapshots, scalar, params) == 0.0
    assert weak_residual_c(snapshots, scalar, params) == 0.0
    vector = VectorTest(spatial=CurlMode(modes=(1, 1), amplitude=0.0), window=_window(snapshots))
    assert weak_residual_u(snapshots, vector, params) == 0.0


def test_constant_test_function_is_mass_bookkeeping(snapshots, params):
    flat = ScalarTest(spatial=CosineMode(modes=(0, 0), amplitude=0.0, offset=1.0), window=_window(snapshots))
    assert weak_residual_n(snapshots, flat, params) <= 1e-10


def test_smooth_test_function_residual_is_small(snapshots, params):
    test_fn = ScalarTest(spatial=CosineMode(modes=(2, 2)), window=_window(snapshots, include_initial=False))
    assert weak_residual_n(snapshots, test_fn, params, regularized=True) < 0.2
    assert weak_residual_c(snapshots, test_fn, params) < 0.2


def test_neumann_check(grid, periodic_grid):
    check_scalar_compatible(CosineMode(modes=(1, 2)), grid)
    with pytest.raises(IncompatibleTestFunction):
        check_scalar_compatible(SineMode(modes=(1, 1)), grid)
    with pytest.raises(IncompatibleTestFunction):
        check_scalar_compatible(CosineMode(modes=(1, 1)), periodic_grid)


def test_window_must_vanish_at_first_snapshot(snapshots, params):
    early = TemporalWindow(t_start=snapshots[0].t - 0.001, t_end=snapshots[-1].t)
    with pytest.raises(IncompatibleTestFunction):
        weak_residual_n(snapshots, ScalarTest(spatial=CosineMode(modes=(1, 1)), window=early), params)


def test_needs_two_snapshots(snapshots, params):
    test_fn = ScalarTest(spatial=CosineMode(modes=(1, 1)), window=_window(snapshots))
    with pytest.raises(EmptySeries):
        weak_residual_c(snapshots[:1], test_fn, params)


def test_solenoidal_test_is_divergence_free(grid, settings):
    psi = solenoidal_test(CurlMode(modes=(1, 2)), grid, settings)
    assert divergence_defect(psi) <= 1e-8


def test_gradient_part_is_filtered(snapshots, params, settings):
    window = _window(snapshots)
    clean = VectorTest(spatial=CurlMode(modes=(1, 1)), window=window)
    polluted = VectorTest(spatial=CurlMode(modes=(1, 1), gradient_part=CosineMode(modes=(2, 1), amplitude=0.3)),
                          window=window)
    a = weak_residual_u(snapshots, clean, params, settings=settings)
    b = weak_residual_u(snapshots, polluted, params, settings=settings)
    assert np.isfinite(a)
    assert a == pytest.approx(b, abs=1e-6)


def test_regularized_momentum_residual_is_finite(snapshots, params, settings):
    vector = VectorTest(spatial=CurlMode(modes=(1, 1)), window=_window(snapshots))
    assert np.isfinite(weak_residual_u(snapshots, vector, params, regularized=True, settings=settings))


def test_literal_and_regularized_density_forms_agree_as_eps_shrinks(snapshots, params):
    test_fn = ScalarTest(spatial=CosineMode(modes=(2, 2)), window=_window(snapshots, include_initial=False))
    literal = weak_residual_n(snapshots, test_fn, params)
    gaps = []
    for eps in (1e-2, 1e-4):
        shifted = params.model_copy(update={"eps": eps})
        gaps.append(abs(weak_residual_n(snapshots, test_fn, shifted, regularized=True) - literal))
    assert gaps[1] < gaps[0]
    assert gaps[1] <= 1e-2


def test_product_mode_is_abstract():
    with pytest.raises(TypeError):
        ProductMode(modes=(1, 1))
