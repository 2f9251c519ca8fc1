# conftest.py - shared grids, relaxed profiles and synthetic trajectories
import logging
import math

import numpy as np
import pytest

from wallrun.core.evolve import EvolveConfig, Trajectory
from wallrun.core.lattice import FieldState, Grid, diagnostics
from wallrun.core.model import ModelParams
from wallrun.core.static_solver import (
    KinkKind, initial_kink_guess, relax_gradient_flow
)

LOG_LEVEL = logging.WARNING

def pair_state(grid, c_left, c_right, time=0.0):
    """Kink at c_left plus antikink at c_right over the phi = -1 vacuum, at rest."""
    a = math.sqrt(2.0)
    x = grid.x
    phi = np.tanh(a * (x - c_left)) - np.tanh(a * (x - c_right)) - 1.0
    return FieldState.static(grid, phi, time=time)

def synthetic_trajectory(grid, times, states, m=None, profiles=None):
    """Trajectory whose snapshots are the given states; no integration involved."""
    m = m or ModelParams(lam=0.0)
    cfg = EvolveConfig(dt=0.5 * grid.dx, t_end=float(times[-1]) or 1.0)
    trajectory = Trajectory(m, cfg, profiles=profiles)
    for t, s in zip(times, states):
        s = s.with_fields(time=float(t))
        trajectory.snapshots.append(s)
        trajectory.diagnostics.append(diagnostics(s, m))
    return trajectory

@pytest.fixture(scope="session")
def profile_grid():
    return Grid.from_spacing(-10.0, 10.0, 0.05)

@pytest.fixture(scope="session")
def bare_kink(profile_grid):
    """lambda = 0 kink relaxed on the profile grid."""
    m = ModelParams(lam=0.0)
    guess = initial_kink_guess(profile_grid, KinkKind.KINK, m)
    return relax_gradient_flow(guess, m, tol=1e-8, log_level=LOG_LEVEL)

@pytest.fixture(scope="session")
def dressed_branches(profile_grid):
    """(psi_plus, psi_minus) kinks at lambda = 1."""
    m = ModelParams(lam=1.0)
    branches = []
    for kind in (KinkKind.PSI_PLUS, KinkKind.PSI_MINUS):
        guess = initial_kink_guess(profile_grid, kind, m)
        branches.append(relax_gradient_flow(guess, m, tol=1e-8, log_level=LOG_LEVEL))
    yield tuple(branches)

@pytest.fixture(scope="session")
def pair_grid():
    return Grid.from_spacing(-20.0, 20.0, 0.05)
