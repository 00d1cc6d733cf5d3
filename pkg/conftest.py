"""
Shared fixtures for the root-level test modules
"""

import numpy as np
import pytest

from ksns.core.dynamics import LinearPotential, ModelParams, State
from ksns.core.elliptic import SolverSettings
from ksns.core.mesh import ScalarField, make_grid

QUICK_CONFIG = """
grid.dim = 2
grid.cells = 16, 16
grid.lengths = 1.0, 1.0
grid.boundary = no_flux_no_slip
params.m = 3
params.kappa = 1
params.eps = 1e-2
params.phi = linear
params.phi_g = 0, -1
initial.n.preset = gaussian_blob
initial.n.center = 0.5, 0.5
initial.n.width = 0.15
initial.n.amplitude = 1
initial.c.preset = rest
initial.u.preset = rest
stepping.t_end = 0.01
output.snapshot_every = 0.005
output.diagnostics_every = 0.002
output.out_dir = {out_dir}
"""

REST_CONFIG = """
grid.dim = 2
grid.cells = 8, 8
grid.lengths = 1.0, 1.0
grid.boundary = no_flux_no_slip
params.m = 3
params.kappa = 1
params.eps = 1e-2
params.phi = linear
params.phi_g = 0, -1
initial.n.preset = rest
initial.c.preset = rest
initial.u.preset = rest
stepping.t_end = 0.05
output.snapshot_every = 0.025
output.diagnostics_every = 0.01
output.out_dir = {out_dir}
"""


@pytest.fixture
def grid():
    return make_grid(2, (16, 16), (1.0, 1.0), "no_flux_no_slip")


@pytest.fixture
def periodic_grid():
    return make_grid(2, (16, 16), (1.0, 1.0), "periodic")


@pytest.fixture
def settings():
    return SolverSettings()


@pytest.fixture
def params():
    return ModelParams(m=3.0, kappa=1.0, eps=1e-2, phi=LinearPotential(g=(0.0, -1.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def blob_state(grid):
    n = ScalarField.from_function(grid, lambda x, y: np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.05))
    c = ScalarField.from_function(grid, lambda x, y: 0.2 * x)
    rest = State.rest(grid)
    return State(n, c, rest.u, rest.p, 0.0)
