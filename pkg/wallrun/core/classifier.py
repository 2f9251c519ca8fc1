"""
Reduction of a collision trajectory to an outcome.

Charged objects are found in the sign-split charge density J^0 = phi'/2:
connected regions above a noise floor whose integrated charge reaches
`charge_threshold`. Their charge-weighted centroids form the tracks that
the classifier reads.
"""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from wallrun.core.evolve import CollisionSetup, EvolveConfig, Trajectory, compose_collision, run
from wallrun.core.lattice import FieldState, Grid, charge_density, charge_with_flag, energy_density, kink_width
from wallrun.core.model import ModelParams
from wallrun.core.static_solver import StaticProfile
from wallrun.errors import WallrunError
from wallrun.log import get_logger

log = get_logger(__name__)

# half-width of tanh(sqrt(2) x), used when a trajectory carries no profiles.
DEFAULT_HALF_WIDTH = 1.0 / math.sqrt(2.0)

class Outcome(str, Enum):
    SCATTER = 'scatter'
    ANNIHILATE = 'annihilate'
    CAPTURE = 'capture'
    EXCITATION_DECAY = 'excitation_decay'
    UNDECIDED = 'undecided'

class ClassifierThresholds(BaseModel):
    model_config = ConfigDict(frozen=True)

    noise_floor: float = Field(1e-3, gt=0, description="|J0| below this is no charged object")
    charge_threshold: float = Field(0.5, gt=0, description="Least integrated |charge| of a tracked object")
    capture_radius: Optional[float] = Field(None, gt=0, description="None means 4 kink half-widths")
    persistence_fraction: float = Field(0.2, gt=0, le=1, description="Final share of the run used as persistence window")
    min_oscillations: int = Field(3, ge=1, description="Separation minima required for capture")
    excitation_amplitude: float = Field(0.05, gt=0, description="Core deviation from the boosted profile that counts as excited")
    decay_ratio: float = Field(0.5, gt=0, lt=1, description="Late/peak deviation ratio that counts as decayed")

    def resolved_capture_radius(self, profiles: Optional[Tuple[StaticProfile, StaticProfile]]) -> float:
        if self.capture_radius is not None:
            return self.capture_radius
        if profiles is None:
            return 4.0 * DEFAULT_HALF_WIDTH
        return 4.0 * 0.5 * float(np.mean([kink_width(p.state) for p in profiles]))

@dataclass(frozen=True, eq=False)
class ChargeTrack:
    """Centroids of the positive and negative charged objects; NaN where absent."""
    times: NDArray
    positive: NDArray
    negative: NDArray
    peak: NDArray

    def __post_init__(self):
        n = len(self.times)
        if any(len(a) != n for a in (self.positive, self.negative, self.peak)):
            raise ValueError('ChargeTrack arrays must share one length')
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError('ChargeTrack times must be strictly increasing')

    @property
    def positive_present(self) -> NDArray:
        return ~np.isnan(self.positive)

    @property
    def negative_present(self) -> NDArray:
        return ~np.isnan(self.negative)

@dataclass(frozen=True)
class OutcomeRecord:
    outcome: Outcome
    initial_Q: float
    final_Q: float
    radiated_energy_fraction: float
    asymmetry_index: float
    outgoing_speeds: Optional[Tuple[float, float]] = None
    oscillation_period: Optional[float] = None
    breather_like: bool = False
    velocity: Optional[float] = None
    failure: Optional[str] = None
    # Q was read from a snapshot whose ends are not vacuum-flat.
    charge_flagged: bool = False

    def __post_init__(self):
        if not 0.0 <= self.radiated_energy_fraction <= 1.0:
            raise ValueError(f'radiated_energy_fraction must lie in [0, 1], got {self.radiated_energy_fraction}')
        if self.outcome in (Outcome.SCATTER, Outcome.CAPTURE, Outcome.EXCITATION_DECAY) and self.final_Q != self.initial_Q:
            raise ValueError(f'{self.outcome.value} with Q changing from {self.initial_Q} to {self.final_Q}')
        if self.outcome is Outcome.ANNIHILATE and self.initial_Q != 0.0:
            raise ValueError(f'annihilation needs Q = 0, got {self.initial_Q}')

    @classmethod
    def failed(cls, velocity: float, reason: str) -> 'OutcomeRecord':
        nan = math.nan
        return cls(Outcome.UNDECIDED, nan, nan, 0.0, 0.0, velocity=velocity, failure=reason)

# -------------------------------------------------------------
# Tracking.
# -------------------------------------------------------------

def _object_centroid(j: NDArray, x: NDArray, dx: float, sign: float, th: ClassifierThresholds) -> float:
    density = sign * j
    labels, count = ndimage.label(density > th.noise_floor)
    weight = 0.0
    moment = 0.0
    for region in range(1, count + 1):
        inside = labels == region
        charge = float(np.sum(density[inside])) * dx
        if charge >= th.charge_threshold:
            weight += float(np.sum(density[inside]))
            moment += float(np.sum(density[inside] * x[inside]))
    return moment / weight if weight > 0.0 else math.nan

def track_charges(trajectory: Trajectory, thresholds: Optional[ClassifierThresholds] = None) -> ChargeTrack:
    th = thresholds or ClassifierThresholds()
    times, positive, negative, peak = [], [], [], []
    for s in trajectory.snapshots:
        j = charge_density(s)
        x = s.grid.x
        times.append(s.time)
        positive.append(_object_centroid(j, x, s.grid.dx, 1.0, th))
        negative.append(_object_centroid(j, x, s.grid.dx, -1.0, th))
        peak.append(float(np.max(np.abs(j))))
    return ChargeTrack(np.array(times), np.array(positive), np.array(negative), np.array(peak))

# -------------------------------------------------------------
# Classification.
# -------------------------------------------------------------

def _speed(times: NDArray, positions: NDArray) -> float:
    ok = ~np.isnan(positions)
    if np.count_nonzero(ok) < 2:
        return math.nan
    return float(np.polyfit(times[ok], positions[ok], 1)[0])

def _local_minima(values: NDArray) -> NDArray:
    if len(values) < 3:
        return np.zeros(0, dtype=int)
    inner = (values[1:-1] < values[:-2]) & (values[1:-1] <= values[2:])
    return np.nonzero(inner)[0] + 1

def _profile_for_charge(profiles: Tuple[StaticProfile, StaticProfile], sign: float) -> Optional[StaticProfile]:
    for p in profiles:
        left, right = p.boundary_vacua
        if sign * (right.phi - left.phi) > 0:
            return p
    return None

class _BoostedReference:
    """A static profile resampled at any center and speed by cubic splines."""

    def __init__(self, p: StaticProfile):
        j = charge_density(p.state)
        self.p = p
        self.offset = float(trapezoid(p.state.x * j, dx=p.grid.dx) / trapezoid(j, dx=p.grid.dx))
        self.phi = CubicSpline(p.state.x, p.state.phi)
        self.psi = CubicSpline(p.state.x, p.state.psi)

    def __call__(self, x: NDArray, center: float, u: float) -> Tuple[NDArray, NDArray]:
        gamma = 1.0 / math.sqrt(1.0 - min(u * u, 0.999999))
        xi = np.clip(self.offset + gamma * (x - center), self.p.grid.x_min, self.p.grid.x_max)
        return self.phi(xi), self.psi(xi)

def _core_deviations(s: FieldState, refs: Tuple[_BoostedReference, _BoostedReference],
                     centers: Tuple[float, float], speeds: Tuple[float, float], half_span: float) -> Tuple[float, float]:
    """
    Largest deviation of (phi, psi) from the superposed pair of boosted
    profiles, over |x - center| < half_span of each object. Each object takes
    the best of the four psi orientations of the pair, so a partner's tail
    or a flipped branch is not counted as excitation.
    """
    x = s.grid.x
    (phi_a, psi_a), (phi_b, psi_b) = (ref(x, c, u) for ref, c, u in zip(refs, centers, speeds))
    left = refs[0] if centers[0] < centers[1] else refs[1]
    shared = left.p.boundary_vacua[1]
    ref_phi = phi_a + phi_b - shared.phi
    result = []
    for c in centers:
        core = np.abs(x - c) < half_span
        if not np.any(core):
            result.append(math.nan)
            continue
        d_phi = float(np.max(np.abs(s.phi[core] - ref_phi[core])))
        best = math.inf
        for sa in (1.0, -1.0):
            for sb in (1.0, -1.0):
                ref_psi = sa * psi_a[core] + sb * psi_b[core] - shared.psi
                best = min(best, max(d_phi, float(np.max(np.abs(s.psi[core] - ref_psi)))))
        result.append(best)
    return result[0], result[1]

def _excitation(trajectory: Trajectory, track: ChargeTrack, after: NDArray, radius: float,
                late: NDArray, th: ClassifierThresholds) -> bool:
    if trajectory.profiles is None or not np.any(after):
        return False
    p_pos = _profile_for_charge(trajectory.profiles, 1.0)
    p_neg = _profile_for_charge(trajectory.profiles, -1.0)
    if p_pos is None or p_neg is None:
        return False
    refs = (_BoostedReference(p_pos), _BoostedReference(p_neg))
    speeds = tuple(_speed(track.times[after], c[after]) for c in (track.positive, track.negative))
    speeds = tuple(0.0 if math.isnan(u) else u for u in speeds)

    series = np.full((len(track.times), 2), math.nan)
    for i in np.nonzero(after)[0]:
        centers = (track.positive[i], track.negative[i])
        series[i] = _core_deviations(trajectory.snapshots[i], refs, centers, speeds, 0.5 * radius)
    for k, sign in enumerate((1.0, -1.0)):
        column = series[:, k]
        if np.all(np.isnan(column)):
            continue
        peak = float(np.nanmax(column))
        tail = column[late & after]
        if peak > th.excitation_amplitude and tail.size and np.nanmean(tail) < th.decay_ratio * peak:
            log.debug(f'object of charge {sign:+.0f}: core deviation peak {peak:.3f}, late mean {np.nanmean(tail):.3f}')
            return True
    return False

def _radiated_fraction(trajectory: Trajectory, track: ChargeTrack, radius: float) -> float:
    e0 = trajectory.diagnostics[0].total_energy if trajectory.diagnostics else 0.0
    if e0 <= 0.0:
        return 0.0
    s = trajectory.final
    x = s.grid.x
    kept = np.zeros(s.grid.n, dtype=bool)
    for c in (track.positive[-1], track.negative[-1]):
        if not math.isnan(c):
            kept |= np.abs(x - c) <= 0.5 * radius
    retained = float(trapezoid(np.where(kept, energy_density(s, trajectory.model), 0.0), dx=s.grid.dx))
    return float(np.clip(1.0 - retained / e0, 0.0, 1.0))

def asymmetry_index(trajectory: Trajectory) -> float:
    """
    Largest L2 distance between the energy density and its mirror image about
    the collision center, relative to the total energy.
    """
    worst = 0.0
    for s in trajectory.snapshots:
        h = energy_density(s, trajectory.model)
        x = s.grid.x
        if s.grid.is_symmetric() and trajectory.center == 0.0:
            mirrored = h[::-1]
        else:
            mirrored = np.interp(2.0 * trajectory.center - x, x, h)
        energy = float(trapezoid(h, dx=s.grid.dx))
        if energy <= 0.0:
            continue
        distance = math.sqrt(float(trapezoid((h - mirrored) ** 2, dx=s.grid.dx)))
        worst = max(worst, distance / energy)
    return worst

def classify_outcome(trajectory: Trajectory, track: ChargeTrack,
                     thresholds: Optional[ClassifierThresholds] = None) -> OutcomeRecord:
    th = thresholds or ClassifierThresholds()
    q0 = trajectory.diagnostics[0].topological_charge
    qf = trajectory.diagnostics[-1].topological_charge
    radius = th.resolved_capture_radius(trajectory.profiles)
    flagged = any(charge_with_flag(s)[1] for s in (trajectory.snapshots[0], trajectory.final))
    if flagged:
        log.warning('topological charge read from snapshots with non-flat ends')
    common = dict(
        initial_Q=q0,
        final_Q=qf,
        charge_flagged=flagged,
        radiated_energy_fraction=_radiated_fraction(trajectory, track, radius),
        asymmetry_index=asymmetry_index(trajectory),
    )
    t = track.times
    if len(t) < 2:
        return OutcomeRecord(Outcome.UNDECIDED, **common)

    late = t >= t[-1] - th.persistence_fraction * (t[-1] - t[0])
    pos, neg = track.positive_present, track.negative_present
    both = pos & neg
    separation = track.negative - track.positive
    neutral = q0 == 0.0

    if neutral and both[0] and not np.any((pos | neg)[late]):
        return OutcomeRecord(Outcome.ANNIHILATE, **common)

    # first contact: the first time an object is lost, else the first approach.
    lost = np.nonzero(~both)[0]
    gap = np.where(both, np.abs(separation), np.inf)
    approaches = _local_minima(gap)
    if lost.size and lost[0] > 0:
        contact = int(lost[0])
    elif approaches.size:
        contact = int(approaches[0])
    else:
        contact = int(np.argmin(gap))
    after = np.arange(len(t)) > contact

    if np.all(both[late]):
        u_pos = _speed(t[late], track.positive[late])
        u_neg = _speed(t[late], track.negative[late])
        direction = np.sign(separation[late][-1])
        receding = (u_neg - u_pos) * direction > 0
        if np.min(np.abs(separation[late])) > radius and receding:
            if track.positive[late][-1] < track.negative[late][-1]:
                speeds = (u_pos, u_neg)
            else:
                speeds = (u_neg, u_pos)
            separated = after & both & (np.abs(separation) > radius)
            excited = _excitation(trajectory, track, separated, radius, late, th)
            outcome = Outcome.EXCITATION_DECAY if excited else Outcome.SCATTER
            return OutcomeRecord(outcome, outgoing_speeds=speeds, **common)

    if np.count_nonzero(both[late]) >= 0.5 * np.count_nonzero(late):
        bounded = np.nanmax(np.where(both[late], np.abs(separation[late]), np.nan)) < radius
        post = after & both
        minima = _local_minima(np.abs(separation[post]))
        if bounded and len(minima) >= th.min_oscillations:
            minima_times = t[post][minima]
            signs = np.sign(separation[post])
            return OutcomeRecord(
                Outcome.CAPTURE,
                oscillation_period=float(np.mean(np.diff(minima_times))),
                breather_like=bool(np.any(signs > 0) and np.any(signs < 0)),
                **common,
            )
    return OutcomeRecord(Outcome.UNDECIDED, **common)

# -------------------------------------------------------------
# Velocity scans.
# -------------------------------------------------------------

def collide(v: float, m: ModelParams, template: CollisionSetup, cfg: EvolveConfig, grid: Grid,
            thresholds: Optional[ClassifierThresholds] = None, log_level=logging.WARNING) -> Tuple[OutcomeRecord, Trajectory]:
    """One head-on collision at speed v, classified."""
    setup = template.with_velocity(v)
    s0 = compose_collision(setup, grid)
    trajectory = run(s0, m, cfg, profiles=(setup.left, setup.right), center=setup.center, log_level=log_level)
    track = track_charges(trajectory, thresholds)
    record = classify_outcome(trajectory, track, thresholds)
    return replace(record, velocity=v), trajectory

def _scan_one(index: int, v: float, m: ModelParams, template: CollisionSetup, cfg: EvolveConfig, grid: Grid,
              thresholds: Optional[ClassifierThresholds]) -> Tuple[int, OutcomeRecord]:
    try:
        record, _ = collide(v, m, template, cfg, grid, thresholds)
    except WallrunError as e:
        record = OutcomeRecord.failed(v, f'{type(e).__name__}: {e}')
    return index, record

def velocity_scan(v_list: Sequence[float], m: ModelParams, template: CollisionSetup, cfg: EvolveConfig,
                  grid: Grid, thresholds: Optional[ClassifierThresholds] = None,
                  workers: Optional[int] = None, log_level=logging.INFO) -> List[OutcomeRecord]:
    """
    One collision per velocity, fanned out over a process pool. Records come
    back in the order of `v_list` whatever the completion order; failed runs
    are `undecided` with the reason attached.
    """
    logger = get_logger(__name__, log_level)
    v_list = list(v_list)
    if not v_list:
        return []
    workers = workers or os.cpu_count() or 1
    logger.info(f'Scanning {len(v_list)} velocities with {workers} worker(s), lambda={m.lam}')

    records: List[Optional[OutcomeRecord]] = [None] * len(v_list)
    if workers == 1:
        for i, v in enumerate(v_list):
            _, records[i] = _scan_one(i, v, m, template, cfg, grid, thresholds)
            logger.info(f'v={v}: {records[i].outcome.value}')
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_scan_one, i, v, m, template, cfg, grid, thresholds) for i, v in enumerate(v_list)]
            for future in as_completed(futures):
                i, record = future.result()
                records[i] = record
                logger.info(f'v={v_list[i]}: {record.outcome.value}')
    return records

def estimate_v1(records: Sequence[OutcomeRecord]) -> Optional[Tuple[float, float]]:
    """
    The lowest velocity above the contiguous low-velocity annihilation band,
    with the scan spacing there as its uncertainty. None without such a band
    or without anything above it.
    """
    ordered = sorted((r for r in records if r.velocity is not None), key=lambda r: r.velocity)
    band = 0
    while band < len(ordered) and ordered[band].outcome is Outcome.ANNIHILATE:
        band += 1
    if band == 0 or band == len(ordered):
        return None
    v1 = ordered[band].velocity
    return v1, v1 - ordered[band - 1].velocity
