"""
Explicit time integration of

    phi_tt = phi_xx - 4 phi (phi^2 + psi^2 - 1)
    psi_tt = psi_xx - 4 psi (phi^2 + psi^2 - 1) - lambda psi

by velocity Verlet (kick, drift, kick) on the three-point Laplacian, and the
boosted-soliton initial data used for collisions.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy.interpolate import CubicSpline

from wallrun.core.lattice import (
    DiagnosticsSample, FieldState, Grid, diagnostics, kink_width, laplacian, pcac_residual,
    total_energy
)
from wallrun.core.model import ModelParams, potential_gradient_field
from wallrun.core.static_solver import StaticProfile
from wallrun.errors import CollisionSetupError, IncompatibleVacua, NumericalInstability
from wallrun.log import get_logger

log = get_logger(__name__)

VACUUM_MATCH_TOLERANCE = 1e-6
OVERLAP_TOLERANCE = 1e-4

class BoundaryKind(str, Enum):
    PINNED_VACUUM = 'pinned_vacuum'
    SPONGE = 'sponge'

class EvolveConfig(BaseModel):
    """Time stepping, boundary treatment and output cadence of a run."""
    model_config = ConfigDict(frozen=True)

    dt: float = Field(0.004, gt=0, description="Time step")
    t_end: float = Field(60.0, gt=0, description="Final time")
    boundary: BoundaryKind = Field(BoundaryKind.PINNED_VACUUM, description="Boundary treatment")
    sponge_width: float = Field(5.0, ge=0, description="Width of each damping layer (sponge boundary only)")
    sponge_strength: float = Field(1.0, ge=0, description="Peak damping rate of the sponge")
    snapshot_stride: int = Field(50, ge=1, description="Steps between stored snapshots")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def check_grid(self, grid: Grid) -> None:
        if self.dt > 0.5 * grid.dx:
            raise ValueError(f'dt={self.dt} violates the CFL bound dt <= 0.5*dx = {0.5 * grid.dx}')
        if self.boundary is BoundaryKind.SPONGE and not self.sponge_width < grid.length / 4.0:
            raise ValueError(f'sponge_width={self.sponge_width} must be below a quarter of the domain ({grid.length / 4.0})')

def sponge_mask(grid: Grid, cfg: EvolveConfig) -> Optional[NDArray]:
    """Quadratic ramp from 0 at the inner edge of each layer to 1 at the boundary."""
    if cfg.boundary is not BoundaryKind.SPONGE or cfg.sponge_width == 0.0 or cfg.sponge_strength == 0.0:
        return None
    x = grid.x
    depth = np.maximum(grid.x_min + cfg.sponge_width - x, x - (grid.x_max - cfg.sponge_width))
    return np.clip(depth / cfg.sponge_width, 0.0, 1.0) ** 2

# -------------------------------------------------------------
# Initial data.
# -------------------------------------------------------------

def boost_profile(p: StaticProfile, v: float, x0: float, grid: Grid) -> FieldState:
    """
    Lorentz-boosted copy of a static profile centered at x0:
    f(x) -> f(gamma (x - x0)), f_t = -v gamma f'(gamma (x - x0)).

    Outside the profile's own grid the fields take their end vacua.

    Raises:
        CollisionSetupError: |v| >= 1, or the boosted soliton is not
            vacuum-flat at the edges of `grid`.
    """
    if not abs(v) < 1.0:
        raise CollisionSetupError(f'velocity must satisfy |v| < 1, got {v}')
    gamma = 1.0 / math.sqrt(1.0 - v * v)
    source = p.state
    xi = gamma * (grid.x - x0)
    inside = (xi >= source.grid.x_min) & (xi <= source.grid.x_max)
    left_vacuum, right_vacuum = p.boundary_vacua

    fields = []
    for values, ends in ((source.phi, (left_vacuum.phi, right_vacuum.phi)),
                         (source.psi, (left_vacuum.psi, right_vacuum.psi))):
        spline = CubicSpline(source.grid.x, values)
        f = np.where(xi < source.grid.x_min, ends[0], ends[1]).astype(float)
        f_t = np.zeros(grid.n)
        f[inside] = spline(xi[inside])
        f_t[inside] = -v * gamma * spline(xi[inside], 1)
        for i, end in ((0, ends[0]), (-1, ends[1])):
            if abs(f[i] - end) > VACUUM_MATCH_TOLERANCE:
                raise CollisionSetupError(
                    f'soliton at x0={x0} (v={v}) is clipped by the grid edge at x={grid.x[i]}: '
                    f'field {f[i]:.6g} differs from its vacuum {end}'
                )
            f[i] = end
            f_t[i] = 0.0
        fields.append((f, f_t))
    (phi, phi_t), (psi, psi_t) = fields
    return FieldState(grid, phi, psi, phi_t, psi_t)

@dataclass(frozen=True, eq=False)
class CollisionSetup:
    """Two solitons, where they start and how fast they move."""
    left: StaticProfile
    right: StaticProfile
    x_left: float
    x_right: float
    v_left: float
    v_right: float
    lam: float = 0.0

    def __post_init__(self):
        for name in ('v_left', 'v_right'):
            if not abs(getattr(self, name)) < 1.0:
                raise CollisionSetupError(f'{name} must satisfy |v| < 1, got {getattr(self, name)}')
        if self.lam < 0:
            raise CollisionSetupError(f'lambda must be >= 0, got {self.lam}')
        if not self.x_left < self.x_right:
            raise CollisionSetupError(f'x_left ({self.x_left}) must be below x_right ({self.x_right})')
        needed = 2.0 * (kink_width(self.left.state) + kink_width(self.right.state))
        if self.x_right - self.x_left < needed:
            raise CollisionSetupError(
                f'solitons overlap: separation {self.x_right - self.x_left:.4g} is below '
                f'twice the combined widths ({needed:.4g})'
            )

    @property
    def center(self) -> float:
        return 0.5 * (self.x_left + self.x_right)

    def with_velocity(self, v: float) -> 'CollisionSetup':
        """The same pair approaching head-on, each at speed v."""
        return CollisionSetup(self.left, self.right, self.x_left, self.x_right, v, -v, self.lam)

def compose_collision(setup: CollisionSetup, grid: Grid) -> FieldState:
    """
    Additive superposition phi = phi_L + phi_R - phi_shared,
    psi = psi_L + psi_R - psi_shared, time derivatives added.

    Raises:
        IncompatibleVacua: the left soliton's right vacuum is not the right
            soliton's left vacuum.
        CollisionSetupError: the superposed energy differs from the sum of
            the two boosted solitons taken alone by OVERLAP_TOLERANCE or more.
    """
    shared = setup.left.boundary_vacua[1]
    other = setup.right.boundary_vacua[0]
    if abs(shared.phi - other.phi) > VACUUM_MATCH_TOLERANCE or abs(shared.psi - other.psi) > VACUUM_MATCH_TOLERANCE:
        raise IncompatibleVacua(
            f'left soliton ends in {shared} but right soliton starts from {other}'
        )
    left = boost_profile(setup.left, setup.v_left, setup.x_left, grid)
    right = boost_profile(setup.right, setup.v_right, setup.x_right, grid)
    state = FieldState(
        grid,
        left.phi + right.phi - shared.phi,
        left.psi + right.psi - shared.psi,
        left.phi_dot + right.phi_dot,
        left.psi_dot + right.psi_dot,
    )

    m = ModelParams(lam=setup.lam)
    isolated = total_energy(left, m) + total_energy(right, m)
    actual = total_energy(state, m)
    error = abs(actual - isolated) / isolated
    log.info(f'Collision data: E={actual:.8g}, isolated sum {isolated:.8g}, overlap error {error:.2e}')
    if error >= OVERLAP_TOLERANCE:
        raise CollisionSetupError(
            f'solitons at {setup.x_left} and {setup.x_right} overlap: superposed energy {actual:.8g} '
            f'differs from the isolated sum {isolated:.8g} by {error:.2e} (limit {OVERLAP_TOLERANCE:.0e})'
        )
    return state

# -------------------------------------------------------------
# Integration.
# -------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """Diagnostics of every step and snapshots every `snapshot_stride` steps."""
    model: ModelParams
    config: EvolveConfig
    diagnostics: List[DiagnosticsSample] = field(default_factory=list)
    snapshots: List[FieldState] = field(default_factory=list)
    profiles: Optional[Tuple[StaticProfile, StaticProfile]] = None
    center: float = 0.0

    @property
    def times(self) -> NDArray:
        return np.array([d.time for d in self.diagnostics])

    @property
    def snapshot_times(self) -> NDArray:
        return np.array([s.time for s in self.snapshots])

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].grid

    @property
    def final(self) -> FieldState:
        return self.snapshots[-1]

class LeapfrogIntegrator:
    """
    Velocity Verlet stepper bound to one grid, model and configuration.

    Endpoints are held at their initial values with zero velocity for both
    boundary kinds; the sponge additionally damps velocities near the edges.
    """

    def __init__(self, grid: Grid, m: ModelParams, cfg: EvolveConfig, log_level=logging.INFO):
        cfg.check_grid(grid)
        self.grid = grid
        self.m = m
        self.cfg = cfg
        self.mask = sponge_mask(grid, cfg)
        self.logger = get_logger(__name__, log_level)

    def _acceleration(self, phi: NDArray, psi: NDArray) -> Tuple[NDArray, NDArray]:
        d_phi, d_psi = potential_gradient_field(phi, psi, self.m.lam)
        a_phi = laplacian(phi, self.grid.dx) - d_phi
        a_psi = laplacian(psi, self.grid.dx) - d_psi
        a_phi[0] = a_phi[-1] = a_psi[0] = a_psi[-1] = 0.0
        return a_phi, a_psi

    def advance(self, s: FieldState, dt: Optional[float] = None, time: Optional[float] = None) -> FieldState:
        """One step of size dt (negative dt steps backwards), stamped with `time` if given."""
        dt = self.cfg.dt if dt is None else dt
        a_phi, a_psi = self._acceleration(s.phi, s.psi)
        phi_dot = s.phi_dot + 0.5 * dt * a_phi
        psi_dot = s.psi_dot + 0.5 * dt * a_psi
        phi = s.phi + dt * phi_dot
        psi = s.psi + dt * psi_dot
        a_phi, a_psi = self._acceleration(phi, psi)
        phi_dot += 0.5 * dt * a_phi
        psi_dot += 0.5 * dt * a_psi
        if self.mask is not None:
            damping = 1.0 - self.cfg.sponge_strength * self.mask * dt
            phi_dot *= damping
            psi_dot *= damping
        for f, f_t, f0 in ((phi, phi_dot, s.phi), (psi, psi_dot, s.psi)):
            f[0], f[-1] = f0[0], f0[-1]
            f_t[0] = f_t[-1] = 0.0

        if not all(np.all(np.isfinite(a)) for a in (phi, psi, phi_dot, psi_dot)):
            self.logger.error(f'Non-finite fields after the step from t={s.time}')
            raise NumericalInstability(f'non-finite field values after the step from t={s.time}', last_good=s)
        return FieldState(s.grid, phi, psi, phi_dot, psi_dot, s.time + dt if time is None else time)

    def run(self, s0: FieldState, profiles: Optional[Tuple[StaticProfile, StaticProfile]] = None,
            center: float = 0.0) -> Trajectory:
        cfg = self.cfg
        n_steps = cfg.n_steps
        trajectory = Trajectory(self.m, cfg, profiles=profiles, center=center)
        self.logger.info(
            f'Evolving {n_steps} steps: n={self.grid.n}, dx={self.grid.dx:.4g}, dt={cfg.dt}, '
            f'boundary={cfg.boundary.value}, lambda={self.m.lam}'
        )

        previous = self.advance(s0, -cfg.dt)
        current = s0
        for k in range(n_steps + 1):
            # the step count fixes the time, not the running sum.
            following = self.advance(current, time=s0.time + (k + 1) * cfg.dt)
            residual = float(np.max(pcac_residual(previous, current, following, cfg.dt, self.m)))
            sample = diagnostics(current, self.m, residual)
            trajectory.diagnostics.append(sample)
            if k % cfg.snapshot_stride == 0 or k == n_steps:
                trajectory.snapshots.append(current)
                self.logger.debug(
                    f't={sample.time:.4f}: E={sample.total_energy:.10g}, Q={sample.topological_charge:g}, '
                    f'Q_N={sample.noether_charge:.3e}, pcac={residual:.3e}'
                )
            previous, current = current, following

        first, last = trajectory.diagnostics[0], trajectory.diagnostics[-1]
        drift = abs(last.total_energy - first.total_energy) / max(first.total_energy, 1e-300)
        self.logger.info(f'Run finished at t={last.time:.4f}: energy drift {drift:.3e}')
        return trajectory

def step(s: FieldState, m: ModelParams, cfg: EvolveConfig) -> FieldState:
    return LeapfrogIntegrator(s.grid, m, cfg).advance(s)

def run(s0: FieldState, m: ModelParams, cfg: EvolveConfig,
        profiles: Optional[Tuple[StaticProfile, StaticProfile]] = None, center: float = 0.0,
        log_level=logging.INFO) -> Trajectory:
    return LeapfrogIntegrator(s0.grid, m, cfg, log_level).run(s0, profiles, center)
