import logging
import math

import numpy as np
import pytest

from wallrun.core.lattice import FieldState, Grid, topological_charge
from wallrun.core.model import BARE_KINK_ENERGY, FieldPoint, ModelParams, dressed_kink_energy
from wallrun.core.static_solver import (
    GradientFlowSettings, KinkKind, RelaxationMethod, RelaxationSchedule, StaticProfile, dressed_kink_exact,
    initial_kink_guess, mirror_x, molecule_guess, relax, relax_gradient_flow, relax_stochastic
)
from wallrun.errors import GridTooNarrow, RelaxationFailed

LOG_LEVEL = logging.INFO

@pytest.fixture(scope="module")
def coarse_grid():
    return Grid.from_spacing(-8.0, 8.0, 0.1)

def relaxed_or_best(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except RelaxationFailed as e:
        return e.best

def short_schedule(seed=0):
    return RelaxationSchedule(trials_per_stage=3000, max_stages=6, rng_seed=seed)

# -------------------------------------------------------------
# Guesses.
# -------------------------------------------------------------

@pytest.mark.parametrize(
    "kind, q, psi_sign",
    [
        (KinkKind.KINK, 1.0, 0.0),
        (KinkKind.ANTIKINK, -1.0, 0.0),
        (KinkKind.PSI_PLUS, 1.0, 1.0),
        (KinkKind.PSI_MINUS, 1.0, -1.0),
    ]
)
def test_initial_kink_guess(profile_grid, kind, q, psi_sign):
    s = initial_kink_guess(profile_grid, kind, ModelParams(lam=1.0))
    assert s.is_static()
    assert topological_charge(s) == pytest.approx(q, abs=1e-9)
    assert np.sign(s.psi[len(s.psi) // 2]) == psi_sign

def test_grid_too_narrow_for_kink():
    with pytest.raises(GridTooNarrow):
        initial_kink_guess(Grid.from_spacing(-3.0, 3.0, 0.05), KinkKind.KINK, ModelParams())

def test_molecule_guess(profile_grid):
    s = molecule_guess(profile_grid)
    x = profile_grid.x
    np.testing.assert_allclose(s.phi, 2.0 / (1.0 + x * x) - 1.0)
    np.testing.assert_allclose(s.psi, x / (1.0 + x * x))
    assert topological_charge(s) == 0.0

def test_molecule_guess_needs_centered_grid():
    with pytest.raises(ValueError):
        molecule_guess(Grid.from_spacing(-5.0, 15.0, 0.1))

def test_dressed_kink_exact_range(profile_grid):
    with pytest.raises(ValueError):
        dressed_kink_exact(profile_grid, 2.0)
    s = dressed_kink_exact(profile_grid, 1.0, sign=-1.0)
    assert s.psi[len(s.psi) // 2] == pytest.approx(-math.sqrt(0.5))

def test_static_profile_rejects_moving_state(profile_grid):
    s = initial_kink_guess(profile_grid, KinkKind.KINK, ModelParams())
    moving = s.with_fields(phi_dot=np.full(profile_grid.n, 0.1))
    with pytest.raises(ValueError):
        StaticProfile(moving, 1.0, s.endpoint_values(), RelaxationMethod.STOCHASTIC, 0)

def test_static_profile_rejects_wrong_vacua(profile_grid):
    s = initial_kink_guess(profile_grid, KinkKind.KINK, ModelParams())
    with pytest.raises(ValueError):
        StaticProfile(s, 1.0, (FieldPoint(1.0, 0.0), FieldPoint(1.0, 0.0)), RelaxationMethod.STOCHASTIC, 0)

# -------------------------------------------------------------
# Gradient flow.
# -------------------------------------------------------------

def test_bare_kink(bare_kink):
    assert bare_kink.converged
    assert bare_kink.method is RelaxationMethod.GRADIENT_FLOW
    assert bare_kink.energy == pytest.approx(BARE_KINK_ENERGY, rel=5e-3)
    assert topological_charge(bare_kink.state) == 1.0
    assert not np.any(bare_kink.state.psi)
    assert bare_kink.meets_static_acceptance()

def test_relaxed_kink_is_a_fixed_point(bare_kink):
    again = relax_gradient_flow(bare_kink.state, ModelParams(lam=0.0), tol=1e-8, log_level=LOG_LEVEL)
    assert again.iterations_used == 0
    assert np.array_equal(again.state.phi, bare_kink.state.phi)
    assert again.energy == bare_kink.energy

def test_gradient_flow_energy_is_monotone(bare_kink, dressed_branches):
    for profile in (bare_kink, *dressed_branches):
        assert np.all(np.diff(profile.energy_history) <= 1e-12 * profile.energy_history[0])

def test_dressed_branches_are_degenerate(dressed_branches):
    plus, minus = dressed_branches
    assert plus.energy == minus.energy
    assert np.array_equal(plus.state.phi, minus.state.phi)
    assert np.array_equal(plus.state.psi, -minus.state.psi)
    assert plus.state.psi[len(plus.state.psi) // 2] > 0

def kink_symmetric_noise(grid, seed, scale=0.02):
    """Smooth random (odd phi, even psi) perturbation; keeps the kink centered."""
    rng = np.random.default_rng(seed)
    x = grid.x
    phi = np.zeros(grid.n)
    psi = np.zeros(grid.n)
    for c_phi, c_psi, width in zip(rng.normal(size=3), rng.normal(size=3), rng.uniform(0.8, 2.5, size=3)):
        envelope = np.exp(-(x / width) ** 2)
        phi += scale * c_phi * x * envelope
        psi += scale * c_psi * envelope
    return phi, psi

def test_independently_seeded_branches_are_degenerate(coarse_grid):
    m = ModelParams(lam=1.0)
    branches = []
    for kind, seed in ((KinkKind.PSI_PLUS, 1), (KinkKind.PSI_MINUS, 2)):
        guess = initial_kink_guess(coarse_grid, kind, m)
        d_phi, d_psi = kink_symmetric_noise(coarse_grid, seed)
        start = guess.with_fields(phi=guess.phi + d_phi, psi=guess.psi + d_psi)
        branches.append(relax_gradient_flow(start, m, tol=1e-11, log_level=LOG_LEVEL))
    plus, minus = branches
    assert plus.energy == pytest.approx(minus.energy, abs=1e-6)
    assert np.max(np.abs(plus.state.phi - minus.state.phi)) < 1e-6
    assert np.max(np.abs(plus.state.psi + minus.state.psi)) < 1e-6
    assert plus.state.psi[coarse_grid.n // 2] > 0.1

def test_dressed_branch_matches_closed_form(dressed_branches, profile_grid):
    plus, _ = dressed_branches
    exact = dressed_kink_exact(profile_grid, 1.0)
    assert plus.energy == pytest.approx(dressed_kink_energy(1.0), rel=2e-3)
    assert np.max(np.abs(plus.state.phi - exact.phi)) < 1e-2
    assert np.max(np.abs(plus.state.psi - exact.psi)) < 1e-2
    assert plus.meets_static_acceptance()

def test_large_lambda_sheds_psi(profile_grid):
    m = ModelParams(lam=5.0)
    guess = initial_kink_guess(profile_grid, KinkKind.PSI_PLUS, m)
    profile = relax_gradient_flow(guess, m, tol=1e-8, log_level=LOG_LEVEL)
    assert np.max(np.abs(profile.state.psi)) < 1e-4
    assert profile.energy == pytest.approx(BARE_KINK_ENERGY, rel=5e-3)

def test_gradient_flow_step_bound(profile_grid):
    settings = GradientFlowSettings(step=0.6 * profile_grid.dx ** 2)
    with pytest.raises(ValueError):
        settings.resolved_step(profile_grid)
    assert GradientFlowSettings().resolved_step(profile_grid) == pytest.approx(0.4 * profile_grid.dx ** 2)

def test_gradient_flow_budget_exhausted(profile_grid):
    m = ModelParams(lam=1.0)
    guess = initial_kink_guess(profile_grid, KinkKind.PSI_PLUS, m)
    with pytest.raises(RelaxationFailed) as info:
        relax_gradient_flow(guess, m, max_iters=10, log_level=LOG_LEVEL)
    best = info.value.best
    assert best.iterations_used == 10
    assert not best.converged
    assert best.energy_history[-1] < best.energy_history[0]

def test_mirror_x_turns_kink_into_antikink(bare_kink):
    anti = mirror_x(bare_kink)
    assert topological_charge(anti.state) == -1.0
    assert anti.boundary_vacua == (bare_kink.boundary_vacua[1], bare_kink.boundary_vacua[0])
    assert anti.energy == bare_kink.energy

@pytest.mark.slow
def test_molecule_relaxes_to_neutral_bound_pair(profile_grid):
    m = ModelParams(lam=1.0)
    profile = relax_gradient_flow(molecule_guess(profile_grid), m, tol=1e-6, log_level=LOG_LEVEL)
    assert profile.converged
    assert topological_charge(profile.state) == 0.0
    assert profile.static_residual_max < 5e-3
    assert np.all(np.diff(profile.energy_history) <= 1e-12 * profile.energy_history[0])
    # the field-space loop around the origin survives
    assert profile.energy > dressed_kink_energy(1.0)
    assert np.min(profile.state.psi) < -0.1 and np.max(profile.state.psi) > 0.1

# -------------------------------------------------------------
# Stochastic relaxation.
# -------------------------------------------------------------

def test_stochastic_is_deterministic(coarse_grid):
    m = ModelParams(lam=1.0)
    guess = initial_kink_guess(coarse_grid, KinkKind.PSI_PLUS, m)
    first = relaxed_or_best(relax_stochastic, guess, m, short_schedule(5), LOG_LEVEL)
    second = relaxed_or_best(relax_stochastic, guess, m, short_schedule(5), LOG_LEVEL)
    other = relaxed_or_best(relax_stochastic, guess, m, short_schedule(6), LOG_LEVEL)
    assert np.array_equal(first.state.phi, second.state.phi)
    assert np.array_equal(first.state.psi, second.state.psi)
    assert first.energy_history.tolist() == second.energy_history.tolist()
    assert first.energy_history[1] != other.energy_history[1]

def test_stochastic_energy_decreases(coarse_grid):
    m = ModelParams(lam=1.0)
    guess = initial_kink_guess(coarse_grid, KinkKind.PSI_PLUS, m)
    profile = relaxed_or_best(relax_stochastic, guess, m, short_schedule(), LOG_LEVEL)
    history = profile.energy_history
    assert profile.method is RelaxationMethod.STOCHASTIC
    assert np.all(np.diff(history) <= 1e-12 * history[0])
    assert history[-1] < history[0]
    assert topological_charge(profile.state) == 1.0

def test_stochastic_branches_are_exact_mirrors(coarse_grid):
    m = ModelParams(lam=1.0)
    plus = relaxed_or_best(relax_stochastic, initial_kink_guess(coarse_grid, KinkKind.PSI_PLUS, m), m,
                           short_schedule(), LOG_LEVEL)
    minus = relaxed_or_best(relax_stochastic, initial_kink_guess(coarse_grid, KinkKind.PSI_MINUS, m), m,
                            short_schedule(), LOG_LEVEL)
    assert plus.energy == minus.energy
    assert np.array_equal(plus.state.phi, minus.state.phi)
    assert np.array_equal(plus.state.psi, -minus.state.psi)

def test_stochastic_keeps_undressed_sector(coarse_grid):
    m = ModelParams(lam=0.0)
    guess = initial_kink_guess(coarse_grid, KinkKind.KINK, m)
    profile = relaxed_or_best(relax_stochastic, guess, m, short_schedule(), LOG_LEVEL)
    assert not np.any(profile.state.psi)
    assert profile.energy == pytest.approx(BARE_KINK_ENERGY, rel=1e-2)

def test_stochastic_budget_exhausted(coarse_grid):
    m = ModelParams(lam=1.0)
    guess = initial_kink_guess(coarse_grid, KinkKind.PSI_PLUS, m)
    schedule = RelaxationSchedule(trials_per_stage=50, max_stages=1, polish_max_iters=0)
    with pytest.raises(RelaxationFailed) as info:
        relax_stochastic(guess, m, schedule, LOG_LEVEL)
    assert info.value.best.iterations_used == 50
    assert not info.value.best.converged

def test_relax_falls_back_to_gradient_flow(coarse_grid):
    m = ModelParams(lam=1.0)
    guess = initial_kink_guess(coarse_grid, KinkKind.PSI_PLUS, m)
    schedule = RelaxationSchedule(trials_per_stage=50, max_stages=1, polish_max_iters=0)
    profile = relax(guess, m, schedule, GradientFlowSettings(tol=1e-8), LOG_LEVEL)
    assert profile.method is RelaxationMethod.GRADIENT_FLOW
    assert profile.converged
    assert profile.iterations_used > 50
    assert profile.energy_history[0] == pytest.approx(profile.energy_history.max())
    assert profile.energy == pytest.approx(dressed_kink_energy(1.0), rel=1e-2)
    assert profile.meets_static_acceptance()

def test_stochastic_agrees_with_gradient_flow(coarse_grid):
    m = ModelParams(lam=1.0)
    guess = initial_kink_guess(coarse_grid, KinkKind.PSI_PLUS, m)
    schedule = RelaxationSchedule()
    stochastic = relax_stochastic(guess, m, schedule, LOG_LEVEL)
    flow = relax_gradient_flow(guess, m, log_level=LOG_LEVEL)
    assert stochastic.method is RelaxationMethod.STOCHASTIC
    assert stochastic.converged
    assert stochastic.meets_static_acceptance()
    assert abs(stochastic.energy - flow.energy) < 2.0 * schedule.convergence_tol
    assert np.max(np.abs(stochastic.state.phi - flow.state.phi)) < 1e-3
    assert np.max(np.abs(stochastic.state.psi - flow.state.psi)) < 1e-3

def test_relax_keeps_polished_stochastic_result(coarse_grid):
    m = ModelParams(lam=1.0)
    guess = initial_kink_guess(coarse_grid, KinkKind.PSI_MINUS, m)
    profile = relax(guess, m, short_schedule(), log_level=LOG_LEVEL)
    assert profile.method is RelaxationMethod.STOCHASTIC
    assert profile.energy == pytest.approx(dressed_kink_energy(1.0), rel=1e-2)
    assert profile.state.psi[coarse_grid.n // 2] < 0

def test_stochastic_molecule(profile_grid):
    m = ModelParams(lam=1.0)
    profile = relaxed_or_best(relax_stochastic, molecule_guess(profile_grid), m, short_schedule(), LOG_LEVEL)
    history = profile.energy_history
    assert profile.method is RelaxationMethod.STOCHASTIC
    assert np.all(np.diff(history) <= 1e-12 * history[0])
    assert history[-1] < history[0]
    assert topological_charge(profile.state) == 0.0
    assert np.min(profile.state.psi) < -0.1 and np.max(profile.state.psi) > 0.1

@pytest.mark.slow
@pytest.mark.parametrize(
    "kind, lam, energy",
    [
        (KinkKind.KINK, 0.0, BARE_KINK_ENERGY),
        (KinkKind.PSI_PLUS, 1.0, dressed_kink_energy(1.0)),
    ]
)
def test_fine_grid_kinks(kind, lam, energy):
    grid = Grid.from_spacing(-10.0, 10.0, 0.01)
    m = ModelParams(lam=lam)
    schedule = RelaxationSchedule(trials_per_stage=5000, max_stages=4)
    profile = relax(initial_kink_guess(grid, kind, m), m, schedule, log_level=LOG_LEVEL)
    assert profile.converged
    assert profile.energy == pytest.approx(energy, rel=5e-3)
    assert profile.first_integral_max < 1e-3
    assert profile.meets_static_acceptance()
