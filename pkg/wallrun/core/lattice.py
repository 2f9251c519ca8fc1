"""
Uniform 1D grid, field configurations and the diagnostics evaluated on them.

Spatial derivatives use second-order central differences with second-order
one-sided differences at the ends (`numpy.gradient(..., edge_order=2)`);
integrals use the trapezoidal rule.
"""
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import trapezoid

from wallrun.core.model import FieldPoint, ModelParams, potential_field, potential_gradient_field
from wallrun.log import get_logger

log = get_logger(__name__)

# endpoint slope above which Q is reported but flagged.
FLAT_BOUNDARY_TOLERANCE = 1e-6

class Grid(BaseModel):
    """n equally spaced points covering [x_min, x_max]."""
    model_config = ConfigDict(frozen=True)

    x_min: float = Field(..., allow_inf_nan=False)
    x_max: float = Field(..., allow_inf_nan=False)
    n: int = Field(..., ge=8)

    @model_validator(mode='after')
    def _check_extent(self) -> 'Grid':
        if not self.x_min < self.x_max:
            raise ValueError(f'x_min ({self.x_min}) must be below x_max ({self.x_max})')
        return self

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> 'Grid':
        """Grid with spacing dx; (x_max - x_min)/dx must be an integer."""
        cells = (x_max - x_min) / dx
        n_cells = int(round(cells))
        if n_cells < 1 or abs(cells - n_cells) > 1e-9 * max(1.0, cells):
            raise ValueError(f'dx={dx} does not divide [{x_min}, {x_max}] into whole cells')
        return cls(x_min=x_min, x_max=x_max, n=n_cells + 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def center(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    @property
    def x(self) -> NDArray:
        # Offsets from the center are half-integer multiples of dx, so a grid
        # symmetric about 0 has bitwise antisymmetric coordinates.
        x = self.center + self.dx * (np.arange(self.n) - 0.5 * (self.n - 1))
        x[0], x[-1] = self.x_min, self.x_max
        return x

    def is_symmetric(self) -> bool:
        return self.x_min == -self.x_max

@dataclass(frozen=True, eq=False)
class FieldState:
    """Fields, their time derivatives and the time they are sampled at."""
    grid: Grid
    phi: NDArray
    psi: NDArray
    phi_dot: NDArray
    psi_dot: NDArray
    time: float = 0.0

    def __post_init__(self):
        for name in ('phi', 'psi', 'phi_dot', 'psi_dot'):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != (self.grid.n,):
                raise ValueError(f'{name} has shape {values.shape}, expected ({self.grid.n},)')
            if not np.all(np.isfinite(values)):
                raise ValueError(f'{name} has non-finite entries')
            object.__setattr__(self, name, values)

    @classmethod
    def static(cls, grid: Grid, phi: NDArray, psi: Optional[NDArray] = None, time: float = 0.0) -> 'FieldState':
        """A state with zero time derivatives."""
        psi = np.zeros(grid.n) if psi is None else psi
        return cls(grid, phi, psi, np.zeros(grid.n), np.zeros(grid.n), time)

    @classmethod
    def vacuum(cls, grid: Grid, sign: float = 1.0) -> 'FieldState':
        return cls.static(grid, np.full(grid.n, float(sign)))

    @property
    def x(self) -> NDArray:
        return self.grid.x

    def is_static(self) -> bool:
        return not (np.any(self.phi_dot) or np.any(self.psi_dot))

    def endpoint_values(self) -> Tuple[FieldPoint, FieldPoint]:
        return (FieldPoint(float(self.phi[0]), float(self.psi[0])),
                FieldPoint(float(self.phi[-1]), float(self.psi[-1])))

    def with_fields(self, **changes) -> 'FieldState':
        return replace(self, **changes)

    def at_rest(self) -> 'FieldState':
        return self.with_fields(phi_dot=np.zeros(self.grid.n), psi_dot=np.zeros(self.grid.n))

    def mirror_psi(self) -> 'FieldState':
        """The (phi, -psi) image."""
        return self.with_fields(psi=-self.psi, psi_dot=-self.psi_dot)

    def mirror_x(self) -> 'FieldState':
        """
        The x -> -x image about the grid center. Fields are reversed;
        a kink becomes an antikink.
        """
        if not self.grid.is_symmetric():
            raise ValueError('mirror_x needs a grid symmetric about 0')
        return self.with_fields(phi=self.phi[::-1].copy(), psi=self.psi[::-1].copy(),
                                phi_dot=self.phi_dot[::-1].copy(), psi_dot=self.psi_dot[::-1].copy())

@dataclass(frozen=True)
class DiagnosticsSample:
    time: float
    total_energy: float
    topological_charge: float
    noether_charge: float
    max_first_integral_deviation: float
    max_pcac_residual: float

    def __post_init__(self):
        if self.total_energy < 0:
            raise ValueError(f'total_energy must be >= 0, got {self.total_energy}')

# -------------------------------------------------------------
# Derivatives.
# -------------------------------------------------------------

def spatial_derivative(f: NDArray, dx: float) -> NDArray:
    return np.gradient(f, dx, edge_order=2)

def laplacian(f: NDArray, dx: float) -> NDArray:
    """Three-point Laplacian on the interior; zero at the two ends."""
    out = np.zeros_like(f)
    out[1:-1] = (f[2:] + f[:-2] - 2.0 * f[1:-1]) / (dx * dx)
    return out

# -------------------------------------------------------------
# Diagnostics.
# -------------------------------------------------------------

def energy_density(s: FieldState, m: ModelParams) -> NDArray:
    """
    Hamiltonian density 1/2(phi_t^2 + psi_t^2 + phi_x^2 + psi_x^2) + V.
    """
    dx = s.grid.dx
    phi_x = spatial_derivative(s.phi, dx)
    psi_x = spatial_derivative(s.psi, dx)
    kinetic = 0.5 * (s.phi_dot ** 2 + s.psi_dot ** 2)
    gradient = 0.5 * (phi_x ** 2 + psi_x ** 2)
    return kinetic + gradient + potential_field(s.phi, s.psi, m.lam)

def total_energy(s: FieldState, m: ModelParams) -> float:
    return float(trapezoid(energy_density(s, m), dx=s.grid.dx))

def momentum_density(s: FieldState) -> NDArray:
    """T^{01} = -(phi_t phi_x + psi_t psi_x); positive for right movers."""
    dx = s.grid.dx
    return -(s.phi_dot * spatial_derivative(s.phi, dx) + s.psi_dot * spatial_derivative(s.psi, dx))

def total_momentum(s: FieldState) -> float:
    return float(trapezoid(momentum_density(s), dx=s.grid.dx))

def topological_charge(s: FieldState) -> float:
    """
    Q = 1/2 [phi(x_max) - phi(x_min)]. The endpoint values stand in for the
    asymptotic ones; a warning is logged when the ends are not flat.
    """
    q, flagged = charge_with_flag(s)
    if flagged:
        log.warning(f'topological charge at t={s.time} evaluated with non-flat boundaries')
    return q

def charge_with_flag(s: FieldState) -> Tuple[float, bool]:
    """Q together with True when the ends are too steep for Q to be trusted."""
    return 0.5 * float(s.phi[-1] - s.phi[0]), not boundaries_flat(s)

def boundaries_flat(s: FieldState, tolerance: float = FLAT_BOUNDARY_TOLERANCE) -> bool:
    dx = s.grid.dx
    slopes = [
        (s.phi[1] - s.phi[0]) / dx, (s.phi[-1] - s.phi[-2]) / dx,
        (s.psi[1] - s.psi[0]) / dx, (s.psi[-1] - s.psi[-2]) / dx,
    ]
    return max(abs(v) for v in slopes) < tolerance

def charge_density(s: FieldState) -> NDArray:
    """
    J^0 = 1/2 dphi/dx. Central differences inside, first-order one-sided at
    the ends, so the trapezoidal integral telescopes to the charge exactly.
    """
    return 0.5 * np.gradient(s.phi, s.grid.dx, edge_order=1)

def noether_density(s: FieldState) -> NDArray:
    """J^0_N = 2 (psi phi_t - phi psi_t); equals 2 omega R^2 for R e^{-i omega t}."""
    return 2.0 * (s.psi * s.phi_dot - s.phi * s.psi_dot)

def noether_flux(s: FieldState) -> NDArray:
    """J^1_N = 2 (phi psi_x - psi phi_x), so that d_mu J^mu_N = 2 lambda phi psi."""
    dx = s.grid.dx
    return 2.0 * (s.phi * spatial_derivative(s.psi, dx) - s.psi * spatial_derivative(s.phi, dx))

def noether_charge(s: FieldState) -> float:
    return float(trapezoid(noether_density(s), dx=s.grid.dx))

def pcac_residual(s_prev: FieldState, s: FieldState, s_next: FieldState, dt: float,
                  m: ModelParams) -> NDArray:
    """
    |d_t J^0_N + d_x J^1_N - 2 lambda phi psi| at the interior points of `s`,
    with centred differences in t (spacing dt) and x.
    """
    if not (s_prev.grid == s.grid == s_next.grid):
        raise ValueError('pcac_residual needs three snapshots on the same grid')
    dt_j0 = (noether_density(s_next) - noether_density(s_prev)) / (2.0 * dt)
    j1 = noether_flux(s)
    dx_j1 = (j1[2:] - j1[:-2]) / (2.0 * s.grid.dx)
    source = 2.0 * m.lam * s.phi * s.psi
    return np.abs(dt_j0[1:-1] + dx_j1 - source[1:-1])

def first_integral_deviation(s: FieldState, m: ModelParams) -> NDArray:
    """1/2 phi'^2 + 1/2 psi'^2 - V; zero for localized static solutions."""
    dx = s.grid.dx
    phi_x = spatial_derivative(s.phi, dx)
    psi_x = spatial_derivative(s.psi, dx)
    return 0.5 * (phi_x ** 2 + psi_x ** 2) - potential_field(s.phi, s.psi, m.lam)

def static_residual(s: FieldState, m: ModelParams) -> NDArray:
    """
    Residuals of phi'' = dV/dphi and psi'' = dV/dpsi at the interior points,
    stacked as a (2, n-2) array.
    """
    dx = s.grid.dx
    d_phi, d_psi = potential_gradient_field(s.phi, s.psi, m.lam)
    return np.vstack([
        laplacian(s.phi, dx)[1:-1] - d_phi[1:-1],
        laplacian(s.psi, dx)[1:-1] - d_psi[1:-1],
    ])

def kink_width(s: FieldState) -> float:
    """
    Width of the charge lump: distance between the two points where |J^0|
    falls to sech(1)^2 of its peak (the +-tanh(1) crossings of a tanh kink).
    """
    j = np.abs(charge_density(s))
    x = s.grid.x
    peak_index = int(np.argmax(j))
    if j[peak_index] == 0.0:
        return 0.0
    level = j[peak_index] / np.cosh(1.0) ** 2
    left = peak_index
    while left > 0 and j[left] > level:
        left -= 1
    right = peak_index
    while right < len(j) - 1 and j[right] > level:
        right += 1
    x_left = np.interp(level, [j[left], j[left + 1]], [x[left], x[left + 1]]) if j[left] <= level else x[left]
    x_right = np.interp(level, [j[right], j[right - 1]], [x[right], x[right - 1]]) if j[right] <= level else x[right]
    return float(x_right - x_left)

def diagnostics(s: FieldState, m: ModelParams, pcac_max: float = 0.0) -> DiagnosticsSample:
    return DiagnosticsSample(
        time=s.time,
        total_energy=total_energy(s, m),
        topological_charge=0.5 * float(s.phi[-1] - s.phi[0]),
        noether_charge=noether_charge(s),
        max_first_integral_deviation=float(np.max(np.abs(first_integral_deviation(s, m)))),
        max_pcac_residual=pcac_max,
    )
