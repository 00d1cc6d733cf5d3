"""
Tests for grids, field containers and reductions
"""

import numpy as np
import pytest

from ksns.core.errors import DimensionMismatch, InvalidExtent, NegativeBase
from ksns.core.mesh import (
    FaceField,
    ScalarField,
    VectorField,
    clamp_roundoff,
    face_l2_norm,
    integrate,
    lp_norm,
    make_grid,
    pairwise_sum,
)


def test_make_grid_rejects_bad_dimension():
    with pytest.raises(DimensionMismatch):
        make_grid(4, (8, 8, 8, 8), (1.0, 1.0, 1.0, 1.0), "periodic")
    with pytest.raises(DimensionMismatch):
        make_grid(2, (8, 8, 8), (1.0, 1.0), "periodic")


def test_make_grid_rejects_bad_extent():
    with pytest.raises(InvalidExtent):
        make_grid(2, (2, 8), (1.0, 1.0), "periodic")
    with pytest.raises(InvalidExtent):
        make_grid(2, (8, 8), (1.0, -1.0), "no_flux_no_slip")


def test_face_shapes_follow_boundary(grid, periodic_grid):
    assert grid.face_shape(0) == (17, 16)
    assert grid.face_shape(1) == (16, 17)
    assert periodic_grid.face_shape(0) == (16, 16)
    assert grid.spacing == (1.0 / 16, 1.0 / 16)


def test_integrate_constant_gives_value_times_volume():
    grid = make_grid(3, (4, 6, 8), (1.0, 2.0, 0.5), "no_flux_no_slip")
    assert integrate(ScalarField.constant(grid, 3.0)) == pytest.approx(3.0, rel=1e-14)


def test_scalar_field_shape_is_checked(grid):
    with pytest.raises(DimensionMismatch):
        ScalarField(grid, np.zeros((15, 16)))


def test_face_field_shape_is_checked(grid):
    with pytest.raises(DimensionMismatch):
        FaceField(grid, (np.zeros((16, 16)), np.zeros((16, 17))))


def test_walls_zeroed_only_on_bounded_grid(grid, periodic_grid):
    ones = VectorField(grid, tuple(np.ones(grid.face_shape(a)) for a in range(2))).with_walls_zeroed()
    assert np.all(ones.components[0][0] == 0.0) and np.all(ones.components[0][-1] == 0.0)
    assert np.all(ones.components[1][:, 0] == 0.0) and np.all(ones.components[1][:, -1] == 0.0)
    assert np.all(ones.components[0][1:-1] == 1.0)
    periodic = VectorField(periodic_grid, tuple(np.ones((16, 16)) for _ in range(2))).with_walls_zeroed()
    assert all(np.all(c == 1.0) for c in periodic.components)


def test_pairwise_sum_ignores_memory_order(rng):
    values = rng.standard_normal((32, 32))
    assert pairwise_sum(values) == pairwise_sum(np.asfortranarray(values))


def test_clamp_roundoff_zeroes_tiny_negatives():
    values = np.array([1.0, -1e-13, 0.5])
    clamped = clamp_roundoff(values)
    assert clamped[1] == 0.0
    with pytest.raises(NegativeBase):
        clamp_roundoff(np.array([1.0, -1e-6]))


def test_lp_norm_of_constant(grid):
    assert lp_norm(ScalarField.constant(grid, 2.0), 3.0) == pytest.approx(2.0, rel=1e-13)
    assert lp_norm(ScalarField.constant(grid, 2.0), 16.0 / 3.0) == pytest.approx(2.0, rel=1e-13)
    with pytest.raises(ValueError):
        lp_norm(ScalarField.constant(grid, 2.0), 0.5)


def test_face_norm_counts_every_face(periodic_grid):
    ones = VectorField(periodic_grid, tuple(np.ones((16, 16)) for _ in range(2)))
    assert face_l2_norm(ones) == pytest.approx(np.sqrt(2.0), rel=1e-14)


def test_refined_grid_halves_spacing(grid):
    fine = grid.refined()
    assert fine.cells == (32, 32)
    assert fine.spacing[0] == pytest.approx(grid.spacing[0] / 2)


# ===== QUADRATURE ORACLES =====

def _gaussian(x, y):
    return np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.02)


def test_integrate_gaussian_matches_fine_quadrature():
    coarse = make_grid(2, (64, 64), (1.0, 1.0), "no_flux_no_slip")
    fine = make_grid(2, (1024, 1024), (1.0, 1.0), "no_flux_no_slip")
    oracle = integrate(ScalarField.from_function(fine, _gaussian))
    assert integrate(ScalarField.from_function(coarse, _gaussian)) == pytest.approx(oracle, rel=1e-6)


def test_integrate_is_linear(grid, rng):
    f = ScalarField(grid, rng.standard_normal(grid.shape))
    g = ScalarField(grid, rng.standard_normal(grid.shape))
    combined = integrate(ScalarField(grid, 2.5 * f.values - 0.75 * g.values))
    expected = 2.5 * integrate(f) - 0.75 * integrate(g)
    scale = 2.5 * integrate(ScalarField(grid, np.abs(f.values))) + 0.75 * integrate(ScalarField(grid, np.abs(g.values)))
    assert abs(combined - expected) <= 1e-13 * scale


def test_integrate_is_stable_under_permutation(grid, rng):
    values = rng.random(grid.shape)
    shuffled = rng.permutation(values.ravel()).reshape(grid.shape)
    assert integrate(ScalarField(grid, shuffled)) == pytest.approx(integrate(ScalarField(grid, values)), rel=1e-13)


def test_fractional_lp_norm_matches_extended_precision(grid, rng):
    values = rng.random(grid.shape)
    p = 5.0 / 4.0
    total = np.sum(values.astype(np.longdouble) ** np.longdouble(p)) * np.longdouble(grid.cell_volume)
    oracle = float(total ** (np.longdouble(1.0) / np.longdouble(p)))
    assert lp_norm(ScalarField(grid, values), p) == pytest.approx(oracle, rel=1e-12)


def test_lp_norm_is_monotone_in_magnitude(grid, rng):
    f = rng.standard_normal(grid.shape)
    g = np.abs(f) + rng.random(grid.shape)
    assert lp_norm(ScalarField(grid, f), 3.0) <= lp_norm(ScalarField(grid, g), 3.0)
    assert lp_norm(ScalarField(grid, np.abs(f)), 1.25) <= lp_norm(ScalarField(grid, g), 1.25)
