"""
Static solutions by energy relaxation.

Two relaxers minimise the same discrete energy

    E_d = sum_links dx/2 ((f[i+1] - f[i]) / dx)^2 + sum_i w_i dx V_i

(w_i the trapezoid weights) with the endpoint values pinned to vacua:

- StochasticRelaxer proposes small smooth changes to one field and keeps
  them only if the energy drops, then polishes the result with L-BFGS.
- GradientFlowRelaxer descends along the discrete gradient, whose field
  part is the three-point Laplacian also used by the integrator.

`relax` runs the first and hands over to the second when the result is not
yet a static solution.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize

from wallrun.core.lattice import (
    FieldState, Grid, first_integral_deviation, static_residual, total_energy
)
from wallrun.core.model import FieldPoint, ModelParams, potential_field, potential_gradient_field
from wallrun.errors import GridTooNarrow, NumericalInstability, RelaxationFailed
from wallrun.log import get_logger

log = get_logger(__name__)

# acceptance of a converged profile; the first-integral bound is quoted at dx=0.01.
FIRST_INTEGRAL_TOLERANCE = 1e-3
STATIC_RESIDUAL_TOLERANCE = 5e-3
REFERENCE_DX = 0.01
# stage acceptance rate below which a proposal scale is annealed.
MIN_ACCEPTANCE = 0.05
# largest |dE_d/df| per unit length that counts as a polished minimum.
POLISH_GRADIENT_TOLERANCE = 1e-8
PSI_SEED_AMPLITUDE = 0.5

class KinkKind(str, Enum):
    KINK = 'kink'
    ANTIKINK = 'antikink'
    PSI_PLUS = 'psi_plus'
    PSI_MINUS = 'psi_minus'

class RelaxationMethod(str, Enum):
    STOCHASTIC = 'stochastic'
    GRADIENT_FLOW = 'gradient_flow'

# -------------------------------------------------------------
# Settings.
# -------------------------------------------------------------

class RelaxationSchedule(BaseModel):
    model_config = ConfigDict(frozen=True)

    initial_amplitude: float = Field(0.1, gt=0, description="Initial half-range of proposal amplitudes")
    amplitude_decay: float = Field(0.5, gt=0, lt=1, description="Amplitude factor applied when a stage accepts < 5%")
    trials_per_stage: Optional[int] = Field(None, ge=1, description="Proposals per stage; None means 10 per grid point")
    max_stages: int = Field(40, ge=1, description="Stage budget")
    convergence_tol: float = Field(1e-8, gt=0, description="Stop once a stage lowers the energy by less than this")
    rng_seed: int = Field(0, ge=0, description="Seed of the proposal generator")
    bump_width: float = Field(3.0, gt=0, description="Bump half-width in grid spacings at scale 1")
    bump_scales: Tuple[float, ...] = Field((1.0, 4.0, 16.0), min_length=1, description="Width multipliers of the proposal ladder")
    polish_max_iters: int = Field(20_000, ge=0, description="L-BFGS iterations of the final polish; 0 disables it")

    def trials(self, grid: Grid) -> int:
        return self.trials_per_stage if self.trials_per_stage is not None else 10 * grid.n

class GradientFlowSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: Optional[float] = Field(None, gt=0, description="Descent step; None means 0.4*dx^2")
    tol: float = Field(1e-9, gt=0, description="Stop once the largest pointwise update is below this")
    max_iters: int = Field(200_000, ge=1, description="Iteration budget")

    def resolved_step(self, grid: Grid) -> float:
        step = self.step if self.step is not None else 0.4 * grid.dx ** 2
        if step >= 0.5 * grid.dx ** 2:
            raise ValueError(f'gradient flow step {step} must be below dx^2/2 = {0.5 * grid.dx ** 2}')
        return step

# -------------------------------------------------------------
# Result.
# -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StaticProfile:
    """A relaxed, time-independent configuration and how it was obtained."""
    state: FieldState
    energy: float
    boundary_vacua: Tuple[FieldPoint, FieldPoint]
    method: RelaxationMethod
    iterations_used: int
    energy_history: NDArray = field(default_factory=lambda: np.zeros(0))
    converged: bool = True
    first_integral_max: float = math.nan
    static_residual_max: float = math.nan

    def __post_init__(self):
        if not self.state.is_static():
            raise ValueError('a StaticProfile must have zero time derivatives')
        for end, vacuum in zip(self.state.endpoint_values(), self.boundary_vacua):
            if abs(end.phi - vacuum.phi) > 1e-6 or abs(end.psi - vacuum.psi) > 1e-6:
                raise ValueError(f'endpoint {end} is not at its declared vacuum {vacuum}')

    @property
    def grid(self) -> Grid:
        return self.state.grid

    def meets_static_acceptance(self) -> bool:
        scale = max(1.0, (self.grid.dx / REFERENCE_DX) ** 2)
        return (self.first_integral_max < FIRST_INTEGRAL_TOLERANCE * scale
                and self.static_residual_max < STATIC_RESIDUAL_TOLERANCE)

    def mirror_psi(self) -> 'StaticProfile':
        left, right = self.boundary_vacua
        return replace(self, state=self.state.mirror_psi(),
                       boundary_vacua=(FieldPoint(left.phi, -left.psi), FieldPoint(right.phi, -right.psi)))

def mirror_x(profile: StaticProfile) -> StaticProfile:
    """The x -> -x image of a profile; turns a kink into an antikink."""
    left, right = profile.boundary_vacua
    return replace(profile, state=profile.state.mirror_x(), boundary_vacua=(right, left))

def make_profile(phi: NDArray, psi: NDArray, grid: Grid, m: ModelParams, method: RelaxationMethod,
                 iterations: int, history, converged: bool) -> StaticProfile:
    state = FieldState.static(grid, phi.copy(), psi.copy())
    left, right = state.endpoint_values()
    return StaticProfile(
        state=state,
        energy=total_energy(state, m),
        boundary_vacua=(left, right),
        method=method,
        iterations_used=iterations,
        energy_history=np.asarray(history, dtype=float),
        converged=converged,
        first_integral_max=float(np.max(np.abs(first_integral_deviation(state, m)))),
        static_residual_max=float(np.max(np.abs(static_residual(state, m)))),
    )

# -------------------------------------------------------------
# Initial guesses.
# -------------------------------------------------------------

def initial_kink_guess(grid: Grid, kind: KinkKind, m: ModelParams) -> FieldState:
    """
    The lambda = 0 kink tanh(sqrt(2) x), its mirror, or the kink seeded with
    a +-0.5 sech(sqrt(2) x) bump in psi to select a dressed branch.
    """
    kind = KinkKind(kind)
    half_width = min(-grid.x_min, grid.x_max)
    if half_width <= 0 or math.tanh(math.sqrt(2.0) * half_width) < 1.0 - 1e-6:
        raise GridTooNarrow(
            f'[{grid.x_min}, {grid.x_max}] is too narrow for a kink: need |x| >= '
            f'{math.atanh(1.0 - 1e-6) / math.sqrt(2.0):.3f} on both sides of 0'
        )
    x = grid.x
    a = math.sqrt(2.0)
    phi = np.tanh(a * x)
    psi = np.zeros(grid.n)
    if kind is KinkKind.ANTIKINK:
        phi = -phi
    elif kind is KinkKind.PSI_PLUS:
        psi = PSI_SEED_AMPLITUDE / np.cosh(a * x)
    elif kind is KinkKind.PSI_MINUS:
        psi = -PSI_SEED_AMPLITUDE / np.cosh(a * x)
    log.debug(f'{kind.value} guess on {grid.n} points, lambda={m.lam}')
    return FieldState.static(grid, phi, psi)

def molecule_guess(grid: Grid) -> FieldState:
    """phi = 2/(1+x^2) - 1, psi = x/(1+x^2): a charge-neutral trial pair."""
    if not grid.is_symmetric():
        raise ValueError('molecule_guess needs a grid centered on 0')
    x = grid.x
    return FieldState.static(grid, 2.0 / (1.0 + x * x) - 1.0, x / (1.0 + x * x))

def dressed_kink_exact(grid: Grid, lam: float, sign: float = 1.0) -> FieldState:
    """
    Closed-form psi-dressed kink for 0 < lambda < 2:
    phi = tanh(sqrt(lam) x), psi = sign * sqrt(1 - lam/2) sech(sqrt(lam) x).
    """
    if not 0.0 < lam < 2.0:
        raise ValueError(f'the dressed kink exists for 0 < lambda < 2, got {lam}')
    a = math.sqrt(lam)
    x = grid.x
    psi = math.copysign(math.sqrt(1.0 - lam / 2.0), sign) / np.cosh(a * x)
    return FieldState.static(grid, np.tanh(a * x), psi)

def snap_to_vacua(phi: NDArray, psi: NDArray) -> None:
    """Pin the endpoints to the nearest of the vacua (+-1, 0), in place."""
    for i in (0, -1):
        phi[i] = 1.0 if phi[i] >= 0 else -1.0
        psi[i] = 0.0

# -------------------------------------------------------------
# Discrete energy.
# -------------------------------------------------------------

def discrete_energy(phi: NDArray, psi: NDArray, lam: float, dx: float) -> float:
    d_phi = np.diff(phi)
    d_psi = np.diff(psi)
    v = potential_field(phi, psi, lam)
    gradient = 0.5 * float(np.dot(d_phi, d_phi) + np.dot(d_psi, d_psi)) / dx
    return gradient + dx * (float(v.sum()) - 0.5 * float(v[0] + v[-1]))

def discrete_gradient(phi: NDArray, psi: NDArray, lam: float, dx: float) -> Tuple[NDArray, NDArray]:
    """Variational derivative of E_d per unit length; zero on the pinned ends."""
    d_phi, d_psi = potential_gradient_field(phi, psi, lam)
    g_phi = np.zeros_like(phi)
    g_psi = np.zeros_like(psi)
    g_phi[1:-1] = d_phi[1:-1] - (phi[2:] + phi[:-2] - 2.0 * phi[1:-1]) / (dx * dx)
    g_psi[1:-1] = d_psi[1:-1] - (psi[2:] + psi[:-2] - 2.0 * psi[1:-1]) / (dx * dx)
    return g_phi, g_psi

def _energy_slack(energy: float) -> float:
    return 1e-12 * max(1.0, abs(energy))

# -------------------------------------------------------------
# Stochastic relaxation.
# -------------------------------------------------------------

class StochasticRelaxer:
    """
    Accept-if-lower relaxation with Gaussian bump proposals.

    Each trial picks a field, a scale of the proposal ladder, an interior
    grid point and an amplitude uniform in [-a, a], where a is the current
    amplitude of that scale. A psi that starts identically zero is never
    perturbed, so the undressed sector stays undressed.
    """

    def __init__(self, schedule: Optional[RelaxationSchedule] = None, log_level=logging.INFO):
        self.schedule = schedule or RelaxationSchedule()
        self.logger = get_logger(__name__, log_level)

    def relax(self, initial: FieldState, m: ModelParams) -> StaticProfile:
        if float(np.sum(initial.psi)) < 0.0:
            # relaxed in the psi >= 0 orientation so both branches are exact images.
            try:
                return self._relax(initial.mirror_psi(), m).mirror_psi()
            except RelaxationFailed as e:
                raise RelaxationFailed(str(e), best=e.best.mirror_psi()) from None
        return self._relax(initial, m)

    def _relax(self, initial: FieldState, m: ModelParams) -> StaticProfile:
        sched = self.schedule
        grid = initial.grid
        x, dx, n, lam = grid.x, grid.dx, grid.n, m.lam
        phi = initial.phi.copy()
        psi = initial.psi.copy()
        snap_to_vacua(phi, psi)
        fields = (phi, psi)
        n_fields = 2 if np.any(psi) else 1

        rng = np.random.default_rng(sched.rng_seed)
        widths = [sched.bump_width * dx * s for s in sched.bump_scales]
        reach = [int(math.ceil(4.0 * w / dx)) for w in widths]
        amplitudes = [sched.initial_amplitude] * len(widths)
        trials = sched.trials(grid)

        energy = discrete_energy(phi, psi, lam, dx)
        history = [energy]
        self.logger.info(f'Stochastic relaxation: n={n}, lambda={lam}, E_d={energy:.10g}, seed={sched.rng_seed}')

        iterations = 0
        stalled = False
        last_drop = math.inf
        for stage in range(sched.max_stages):
            stage_start = energy
            tried = [0] * len(widths)
            accepted = [0] * len(widths)
            for _ in range(trials):
                k = int(rng.integers(n_fields))
                r = int(rng.integers(len(widths)))
                c = int(rng.integers(1, n - 1))
                a = float(rng.uniform(-amplitudes[r], amplitudes[r]))
                tried[r] += 1
                lo = max(1, c - reach[r])
                hi = min(n - 2, c + reach[r])

                f = fields[k]
                other = fields[1 - k]
                bump = a * np.exp(-((x[lo:hi + 1] - x[c]) / widths[r]) ** 2)
                old = f[lo - 1:hi + 2]
                new = old.copy()
                new[1:-1] += bump
                d_gradient = 0.5 * (float(np.sum(np.diff(new) ** 2)) - float(np.sum(np.diff(old) ** 2))) / dx
                g = other[lo:hi + 1]
                if k == 0:
                    d_potential = potential_field(new[1:-1], g, lam) - potential_field(old[1:-1], g, lam)
                else:
                    d_potential = potential_field(g, new[1:-1], lam) - potential_field(g, old[1:-1], lam)
                delta = d_gradient + dx * float(np.sum(d_potential))
                if delta < 0.0:
                    f[lo:hi + 1] = new[1:-1]
                    energy += delta
                    accepted[r] += 1
            iterations += trials

            energy = discrete_energy(phi, psi, lam, dx)
            if energy > stage_start + _energy_slack(stage_start):
                self.logger.error(f'Stage {stage}: energy rose from {stage_start} to {energy}')
                raise NumericalInstability(f'stochastic relaxation gained energy in stage {stage}')
            history.append(energy)
            rates = [acc / max(1, t) for acc, t in zip(accepted, tried)]
            self.logger.debug(
                f'Stage {stage}: E_d={energy:.12g}, acceptance '
                + ', '.join(f'{rate:.3f}@{amp:.2e}' for rate, amp in zip(rates, amplitudes))
            )
            for r, rate in enumerate(rates):
                if rate < MIN_ACCEPTANCE:
                    amplitudes[r] *= sched.amplitude_decay
            last_drop = stage_start - energy
            if last_drop < sched.convergence_tol:
                stalled = True
                break

        polished, steps = self._polish(phi, psi, n_fields, lam, dx)
        iterations += steps
        energy = discrete_energy(phi, psi, lam, dx)
        if energy < history[-1]:
            history.append(energy)
        converged = stalled or polished

        profile = make_profile(phi, psi, grid, m, RelaxationMethod.STOCHASTIC, iterations, history, converged)
        if not converged:
            raise RelaxationFailed(
                f'stochastic relaxation did not converge in {sched.max_stages} stages '
                f'(last stage lowered E by {last_drop:.3e})',
                best=profile,
            )
        self.logger.info(f'Stochastic relaxation converged after {stage + 1} stages: E={profile.energy:.10g}')
        return profile

    def _polish(self, phi: NDArray, psi: NDArray, n_fields: int, lam: float, dx: float) -> Tuple[bool, int]:
        """
        L-BFGS on the interior values, in place. The result is kept only when
        it lowers E_d. Returns whether the largest gradient ended below
        POLISH_GRADIENT_TOLERANCE, and the iterations spent.
        """
        budget = self.schedule.polish_max_iters
        if budget == 0:
            return False, 0
        inner = slice(1, len(phi) - 1)
        size = len(phi) - 2
        trial = (phi.copy(), psi.copy())

        def unpack(values: NDArray) -> None:
            for k in range(n_fields):
                trial[k][inner] = values[k * size:(k + 1) * size]

        def objective(values: NDArray) -> Tuple[float, NDArray]:
            unpack(values)
            gradient = discrete_gradient(trial[0], trial[1], lam, dx)
            return (discrete_energy(trial[0], trial[1], lam, dx),
                    dx * np.concatenate([g[inner] for g in gradient[:n_fields]]))

        start = np.concatenate([f[inner] for f in (phi, psi)[:n_fields]])
        before = discrete_energy(phi, psi, lam, dx)
        result = minimize(objective, start, jac=True, method='L-BFGS-B',
                          options=dict(maxiter=budget, maxfun=4 * budget, maxcor=20, ftol=0.0,
                                       gtol=0.1 * POLISH_GRADIENT_TOLERANCE * dx))
        unpack(result.x)
        after = discrete_energy(trial[0], trial[1], lam, dx)
        if after < before:
            phi[inner] = trial[0][inner]
            psi[inner] = trial[1][inner]
        largest = max(float(np.max(np.abs(g))) for g in discrete_gradient(phi, psi, lam, dx)[:n_fields])
        self.logger.debug(f'Polish: {result.nit} iterations ({result.message}), E_d {before:.12g} -> {after:.12g}, '
                          f'max gradient {largest:.2e}')
        return largest < POLISH_GRADIENT_TOLERANCE, int(result.nit)

def relax_stochastic(initial: FieldState, m: ModelParams, sched: Optional[RelaxationSchedule] = None,
                     log_level=logging.INFO) -> StaticProfile:
    return StochasticRelaxer(sched, log_level).relax(initial, m)

# -------------------------------------------------------------
# Gradient flow.
# -------------------------------------------------------------

class GradientFlowRelaxer:
    """Explicit descent f <- f - step * dE_d/df with the endpoints pinned."""

    def __init__(self, settings: Optional[GradientFlowSettings] = None, log_level=logging.INFO):
        self.settings = settings or GradientFlowSettings()
        self.logger = get_logger(__name__, log_level)

    def relax(self, initial: FieldState, m: ModelParams) -> StaticProfile:
        settings = self.settings
        grid = initial.grid
        dx, lam = grid.dx, m.lam
        step = settings.resolved_step(grid)
        phi = initial.phi.copy()
        psi = initial.psi.copy()
        snap_to_vacua(phi, psi)

        energy = discrete_energy(phi, psi, lam, dx)
        history = [energy]
        self.logger.info(f'Gradient flow: n={grid.n}, lambda={lam}, step={step:.3e}, E_d={energy:.10g}')

        converged = False
        iterations = 0
        while iterations < settings.max_iters:
            g_phi, g_psi = discrete_gradient(phi, psi, lam, dx)
            largest = step * max(float(np.max(np.abs(g_phi))), float(np.max(np.abs(g_psi))))
            if largest < settings.tol:
                converged = True
                break
            previous = (phi.copy(), psi.copy())
            phi -= step * g_phi
            psi -= step * g_psi
            iterations += 1
            new_energy = discrete_energy(phi, psi, lam, dx)
            if new_energy > energy + _energy_slack(energy):
                self.logger.error(f'Iteration {iterations}: energy rose from {energy} to {new_energy}')
                raise NumericalInstability(
                    f'gradient flow diverged at iteration {iterations} (step={step})',
                    last_good=FieldState.static(grid, *previous),
                )
            energy = new_energy
            history.append(energy)
            if iterations % 10000 == 0:
                self.logger.debug(f'Iteration {iterations}: E_d={energy:.12g}, max update {largest:.3e}')

        profile = make_profile(phi, psi, grid, m, RelaxationMethod.GRADIENT_FLOW, iterations, history, converged)
        if not converged:
            raise RelaxationFailed(
                f'gradient flow did not converge in {settings.max_iters} iterations',
                best=profile,
            )
        self.logger.info(f'Gradient flow converged after {iterations} iterations: E={profile.energy:.10g}')
        return profile

def relax_gradient_flow(initial: FieldState, m: ModelParams, step: Optional[float] = None,
                        tol: float = 1e-9, max_iters: int = 200_000, log_level=logging.INFO) -> StaticProfile:
    settings = GradientFlowSettings(step=step, tol=tol, max_iters=max_iters)
    return GradientFlowRelaxer(settings, log_level).relax(initial, m)

def relax(initial: FieldState, m: ModelParams, schedule: Optional[RelaxationSchedule] = None,
          flow: Optional[GradientFlowSettings] = None, log_level=logging.INFO) -> StaticProfile:
    """
    Stochastic relaxation, finished by gradient flow when the stochastic
    result is not yet static to the acceptance tolerances.
    """
    try:
        profile = relax_stochastic(initial, m, schedule, log_level)
    except RelaxationFailed as e:
        log.warning(f'{e}; continuing with gradient flow')
        profile = e.best
    else:
        if profile.meets_static_acceptance():
            return profile
        log.warning(
            f'stochastic result not static (first integral {profile.first_integral_max:.2e}, '
            f'residual {profile.static_residual_max:.2e}); continuing with gradient flow'
        )
    finished = GradientFlowRelaxer(flow, log_level).relax(profile.state, m)
    return replace(
        finished,
        iterations_used=profile.iterations_used + finished.iterations_used,
        energy_history=np.concatenate([profile.energy_history, finished.energy_history]),
    )
