"""
Analytic layer for the potential

    V(phi, psi) = (phi^2 + psi^2 - 1)^2 + lambda/2 * psi^2

Everything else in wallrun evaluates the potential, its gradient and its
Hessian through this module. The array helpers (`potential_field`,
`potential_gradient_field`) accept numpy arrays of any shape; the FieldPoint
operations are the scalar API.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

# regime boundaries on lambda.
U1_SYMMETRIC_LAMBDA = 0.0
PHI4_REDUCTION_LAMBDA = 4.0
GRADIENT_TOLERANCE = 1e-12

class ModelParams(BaseModel):
    """Coupling of the explicit U(1) breaking term."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(0.0, ge=0.0, alias='lambda', allow_inf_nan=False,
                       description='Explicit symmetry breaking coupling')

    @property
    def u1_symmetric(self) -> bool:
        return self.lam == U1_SYMMETRIC_LAMBDA

    @property
    def reduces_to_phi4(self) -> bool:
        return self.lam >= PHI4_REDUCTION_LAMBDA

@dataclass(frozen=True)
class FieldPoint:
    """A point (phi, psi) of field space, i.e. Phi = phi + i psi."""
    phi: float
    psi: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and math.isfinite(self.psi)):
            raise ValueError(f'FieldPoint must be finite, got ({self.phi}, {self.psi})')

class CriticalKind(str, Enum):
    MINIMUM = 'minimum'
    SADDLE = 'saddle'
    LOCAL_MAXIMUM = 'local_maximum'

@dataclass(frozen=True)
class CriticalPoint:
    location: FieldPoint
    kind: CriticalKind
    potential_value: float
    degenerate: bool = False

# -------------------------------------------------------------
# Array helpers.
# -------------------------------------------------------------

def potential_field(phi: ArrayLike, psi: ArrayLike, lam: float) -> NDArray:
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    r = phi * phi + psi * psi - 1.0
    return r * r + 0.5 * lam * psi * psi

def potential_gradient_field(phi: ArrayLike, psi: ArrayLike, lam: float) -> Tuple[NDArray, NDArray]:
    """(dV/dphi, dV/dpsi); the negated right-hand sides of the field equations."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    r = phi * phi + psi * psi - 1.0
    return 4.0 * phi * r, 4.0 * psi * r + lam * psi

# -------------------------------------------------------------
# FieldPoint operations.
# -------------------------------------------------------------

def potential(p: FieldPoint, m: ModelParams) -> float:
    return float(potential_field(p.phi, p.psi, m.lam))

def grad_potential(p: FieldPoint, m: ModelParams) -> Tuple[float, float]:
    d_phi, d_psi = potential_gradient_field(p.phi, p.psi, m.lam)
    return float(d_phi), float(d_psi)

def hessian(p: FieldPoint, m: ModelParams) -> NDArray:
    r = p.phi ** 2 + p.psi ** 2 - 1.0
    off = 8.0 * p.phi * p.psi
    return np.array([
        [4.0 * r + 8.0 * p.phi ** 2, off],
        [off, 4.0 * r + 8.0 * p.psi ** 2 + m.lam],
    ])

def vacuum_masses(m: ModelParams) -> Tuple[float, float]:
    """
    Curvatures (m_chi, m_psi) of V at the vacua (+-1, 0).

    These are the Hessian diagonal entries themselves, i.e. squared masses in
    the usual convention; no square root is taken.
    """
    h = hessian(FieldPoint(1.0, 0.0), m)
    return float(h[0, 0]), float(h[1, 1])

def _classify(p: FieldPoint, m: ModelParams) -> Tuple[CriticalKind, bool]:
    eigenvalues, eigenvectors = np.linalg.eigh(hessian(p, m))
    signs = []
    degenerate = False
    for value, vector in zip(eigenvalues, eigenvectors.T):
        if abs(value) > 1e-12:
            signs.append(np.sign(value))
            continue
        # null direction: the quartic term decides.
        degenerate = True
        h = 1e-2
        rise = 0.5 * (
            potential(FieldPoint(p.phi + h * vector[0], p.psi + h * vector[1]), m)
            + potential(FieldPoint(p.phi - h * vector[0], p.psi - h * vector[1]), m)
        ) - potential(p, m)
        signs.append(np.sign(rise))
    if all(s > 0 for s in signs):
        return CriticalKind.MINIMUM, degenerate
    if all(s < 0 for s in signs):
        return CriticalKind.LOCAL_MAXIMUM, degenerate
    return CriticalKind.SADDLE, degenerate

def classify_extrema(m: ModelParams) -> List[CriticalPoint]:
    """
    Stationary points of V, ordered minima first.

    For lambda < 4 the psi axis carries two extra stationary points at
    psi = +-sqrt(1 - lambda/4); at lambda = 0 they sit on the degenerate
    vacuum circle. For lambda >= 4 only the origin remains on that axis.
    """
    locations = [FieldPoint(-1.0, 0.0), FieldPoint(1.0, 0.0), FieldPoint(0.0, 0.0)]
    if m.lam < PHI4_REDUCTION_LAMBDA:
        psi_s = math.sqrt(1.0 - m.lam / 4.0)
        locations += [FieldPoint(0.0, psi_s), FieldPoint(0.0, -psi_s)]

    points = []
    for location in locations:
        g = grad_potential(location, m)
        assert math.hypot(*g) < GRADIENT_TOLERANCE, f'{location} is not stationary: {g}'
        kind, degenerate = _classify(location, m)
        points.append(CriticalPoint(
            location=location,
            kind=kind,
            potential_value=potential(location, m),
            degenerate=degenerate,
        ))
    order = {CriticalKind.MINIMUM: 0, CriticalKind.SADDLE: 1, CriticalKind.LOCAL_MAXIMUM: 2}
    return sorted(points, key=lambda c: order[c.kind])

def dressed_kink_energy(lam: float) -> float:
    """
    Rest energy of the psi-dressed kink, sqrt(lam) * (2 - lam/3), lam < 2.

    At lam = 2 it meets the bare kink energy 4*sqrt(2)/3.
    """
    if not 0.0 <= lam < 2.0:
        raise ValueError(f'the dressed kink exists for 0 <= lambda < 2, got {lam}')
    return math.sqrt(lam) * (2.0 - lam / 3.0)

BARE_KINK_ENERGY = 4.0 * math.sqrt(2.0) / 3.0
