"""
Run configuration: one flat pydantic model mirroring the key=value text
format, plus builders for the core settings objects.
"""
from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator

from wallrun.core.classifier import ClassifierThresholds
from wallrun.core.evolve import BoundaryKind, EvolveConfig
from wallrun.core.lattice import Grid
from wallrun.core.model import ModelParams
from wallrun.core.static_solver import GradientFlowSettings, RelaxationSchedule

SCHEMA_VERSION = 1
AUTO = 'auto'

class RelaxKind(str, Enum):
    KINK = 'kink'
    ANTIKINK = 'antikink'
    PSI_PLUS = 'psi_plus'
    PSI_MINUS = 'psi_minus'
    MOLECULE = 'molecule'
    ALL = 'all'

class Branch(str, Enum):
    """psi dressing of a collision partner."""
    BARE = 'bare'
    PLUS = 'plus'
    MINUS = 'minus'

class HeatmapQuantity(str, Enum):
    CHARGE_DENSITY = 'charge_density'
    ENERGY_DENSITY = 'energy_density'

class HeatmapSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    quantity: HeatmapQuantity = Field(HeatmapQuantity.CHARGE_DENSITY, description="Plotted density")
    limit: Optional[float] = Field(None, gt=0, description="Color scale limit; None means max |value|")
    x_stride: int = Field(1, ge=1, description="Keep every x_stride-th grid point")
    t_stride: int = Field(1, ge=1, description="Keep every t_stride-th snapshot")

def _is_whole(cells: float) -> bool:
    return abs(cells - round(cells)) <= 1e-9 * max(1.0, abs(cells))

# -------------------------------------------------------------
# Run configuration.
# -------------------------------------------------------------
class RunConfig(BaseModel):
    """
    Every parameter of a run. Field order is the order of the text format;
    checks that involve two keys sit on the later key.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra='forbid')

    schema_version: int = Field(SCHEMA_VERSION, description="Format version")

    # model
    lam: float = Field(1.0, ge=0, alias='lambda', allow_inf_nan=False, description="Explicit symmetry breaking coupling")

    # grid
    x_min: float = Field(-30.0, allow_inf_nan=False, description="Left edge of the domain")
    x_max: float = Field(30.0, allow_inf_nan=False, description="Right edge of the domain")
    dx: float = Field(0.01, gt=0, description="Grid spacing; must divide the domain")

    # evolution
    dt: float = Field(0.004, gt=0, description="Time step, at most 0.5*dx")
    t_end: float = Field(60.0, gt=0, description="Final time")
    boundary: BoundaryKind = Field(BoundaryKind.PINNED_VACUUM, description="pinned_vacuum or sponge")
    sponge_width: float = Field(5.0, ge=0, description="Sponge layer width, below a quarter of the domain")
    sponge_strength: float = Field(1.0, ge=0, description="Peak sponge damping rate")
    snapshot_stride: int = Field(50, ge=1, description="Steps between stored snapshots")

    # relaxation
    relax_kind: RelaxKind = Field(RelaxKind.ALL, description="Profile(s) produced by `relax`")
    initial_amplitude: float = Field(0.1, gt=0)
    amplitude_decay: float = Field(0.5, gt=0, lt=1)
    trials_per_stage: Optional[int] = Field(None, ge=1, description="auto means 10 per grid point")
    max_stages: int = Field(40, ge=1)
    convergence_tol: float = Field(1e-8, gt=0)
    rng_seed: int = Field(0, ge=0)
    bump_width: float = Field(3.0, gt=0)
    bump_scales: Tuple[float, ...] = Field((1.0, 4.0, 16.0), min_length=1)
    polish_max_iters: int = Field(20_000, ge=0, description="0 disables the L-BFGS polish")
    flow_step: Optional[float] = Field(None, gt=0, description="auto means 0.4*dx^2")
    flow_tol: float = Field(1e-9, gt=0)
    flow_max_iters: int = Field(200_000, ge=1)
    profile_half_width: float = Field(10.0, gt=0, description="Half-width of the grid collision profiles are relaxed on")
    profile_dx: float = Field(0.02, gt=0, description="Spacing of that grid")

    # collision
    left_branch: Branch = Field(Branch.PLUS, description="Dressing of the kink")
    right_branch: Branch = Field(Branch.MINUS, description="Dressing of the antikink")
    x_left: float = Field(-10.0, allow_inf_nan=False)
    x_right: float = Field(10.0, allow_inf_nan=False)
    v_left: float = Field(0.6, gt=-1, lt=1)
    v_right: float = Field(-0.6, gt=-1, lt=1)

    # scan
    v_list: Tuple[float, ...] = Field((), description="Explicit scan velocities")
    v_min: Optional[float] = Field(None, ge=0, lt=1)
    v_max: Optional[float] = Field(None, ge=0, lt=1)
    v_step: Optional[float] = Field(None, gt=0)

    # classifier
    noise_floor: float = Field(1e-3, gt=0)
    charge_threshold: float = Field(0.5, gt=0)
    capture_radius: Optional[float] = Field(None, gt=0, description="auto means 4 kink half-widths")
    persistence_fraction: float = Field(0.2, gt=0, le=1)
    min_oscillations: int = Field(3, ge=1)
    excitation_amplitude: float = Field(0.05, gt=0)
    decay_ratio: float = Field(0.5, gt=0, lt=1)

    # heatmap
    heatmap_quantity: HeatmapQuantity = Field(HeatmapQuantity.CHARGE_DENSITY)
    heatmap_limit: Optional[float] = Field(None, gt=0, description="auto means max |value|")
    heatmap_x_stride: int = Field(10, ge=1)
    heatmap_t_stride: int = Field(1, ge=1)

    @field_validator('trials_per_stage', 'flow_step', 'v_min', 'v_max', 'v_step', 'capture_radius',
                     'heatmap_limit', mode='before')
    @classmethod
    def _auto(cls, value):
        if isinstance(value, str) and value.strip() in (AUTO, ''):
            return None
        return value

    @field_validator('bump_scales', 'v_list', mode='before')
    @classmethod
    def _comma_list(cls, value):
        if isinstance(value, str):
            return tuple(float(item) for item in value.split(',') if item.strip())
        return value

    @field_validator('schema_version')
    @classmethod
    def _known_schema(cls, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise ValueError(f'unsupported schema_version {value}, expected {SCHEMA_VERSION}')
        return value

    @field_validator('x_max')
    @classmethod
    def _ordered_extent(cls, value: float, info: ValidationInfo) -> float:
        x_min = info.data.get('x_min')
        if x_min is not None and not x_min < value:
            raise ValueError(f'x_max ({value}) must exceed x_min ({x_min})')
        return value

    @field_validator('dx')
    @classmethod
    def _whole_cells(cls, value: float, info: ValidationInfo) -> float:
        x_min, x_max = info.data.get('x_min'), info.data.get('x_max')
        if x_min is None or x_max is None:
            return value
        cells = (x_max - x_min) / value
        if not _is_whole(cells):
            raise ValueError(f'dx={value} does not divide [{x_min}, {x_max}] into whole cells')
        if round(cells) + 1 < 8:
            raise ValueError(f'dx={value} leaves fewer than 8 grid points')
        return value

    @field_validator('dt')
    @classmethod
    def _cfl(cls, value: float, info: ValidationInfo) -> float:
        dx = info.data.get('dx')
        if dx is not None and value > 0.5 * dx:
            raise ValueError(f'dt={value} violates the CFL bound dt <= 0.5*dx = {0.5 * dx}')
        return value

    @field_validator('sponge_width')
    @classmethod
    def _sponge_fits(cls, value: float, info: ValidationInfo) -> float:
        x_min, x_max = info.data.get('x_min'), info.data.get('x_max')
        boundary = info.data.get('boundary')
        if boundary is BoundaryKind.SPONGE and x_min is not None and x_max is not None \
                and not value < (x_max - x_min) / 4.0:
            raise ValueError(f'sponge_width={value} must be below a quarter of the domain ({(x_max - x_min) / 4.0})')
        return value

    @field_validator('profile_dx')
    @classmethod
    def _profile_cells(cls, value: float, info: ValidationInfo) -> float:
        half_width = info.data.get('profile_half_width')
        if half_width is not None and not _is_whole(2.0 * half_width / value):
            raise ValueError(f'profile_dx={value} does not divide [-{half_width}, {half_width}] into whole cells')
        return value

    @field_validator('x_right')
    @classmethod
    def _ordered_positions(cls, value: float, info: ValidationInfo) -> float:
        x_left = info.data.get('x_left')
        if x_left is not None and not x_left < value:
            raise ValueError(f'x_right ({value}) must exceed x_left ({x_left})')
        return value

    @field_validator('v_list')
    @classmethod
    def _subluminal(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        for v in value:
            if not 0 <= v < 1:
                raise ValueError(f'scan velocities must lie in [0, 1), got {v}')
        return value

    @field_validator('v_max')
    @classmethod
    def _ordered_range(cls, value: Optional[float], info: ValidationInfo) -> Optional[float]:
        v_min = info.data.get('v_min')
        if value is not None and v_min is not None and value < v_min:
            raise ValueError(f'v_max ({value}) must not be below v_min ({v_min})')
        return value

    # ---------------------------------------------------------
    # Builders.
    # ---------------------------------------------------------

    def model_params(self) -> ModelParams:
        return ModelParams(lam=self.lam)

    def grid(self) -> Grid:
        return Grid.from_spacing(self.x_min, self.x_max, self.dx)

    def profile_grid(self) -> Grid:
        return Grid.from_spacing(-self.profile_half_width, self.profile_half_width, self.profile_dx)

    def evolve_config(self) -> EvolveConfig:
        return EvolveConfig(
            dt=self.dt, t_end=self.t_end, boundary=self.boundary, sponge_width=self.sponge_width,
            sponge_strength=self.sponge_strength, snapshot_stride=self.snapshot_stride,
        )

    def schedule(self) -> RelaxationSchedule:
        return RelaxationSchedule(
            initial_amplitude=self.initial_amplitude, amplitude_decay=self.amplitude_decay,
            trials_per_stage=self.trials_per_stage, max_stages=self.max_stages,
            convergence_tol=self.convergence_tol, rng_seed=self.rng_seed,
            bump_width=self.bump_width, bump_scales=self.bump_scales,
            polish_max_iters=self.polish_max_iters,
        )

    def flow_settings(self) -> GradientFlowSettings:
        return GradientFlowSettings(step=self.flow_step, tol=self.flow_tol, max_iters=self.flow_max_iters)

    def thresholds(self) -> ClassifierThresholds:
        return ClassifierThresholds(
            noise_floor=self.noise_floor, charge_threshold=self.charge_threshold,
            capture_radius=self.capture_radius, persistence_fraction=self.persistence_fraction,
            min_oscillations=self.min_oscillations, excitation_amplitude=self.excitation_amplitude,
            decay_ratio=self.decay_ratio,
        )

    def heatmap_spec(self) -> HeatmapSpec:
        return HeatmapSpec(quantity=self.heatmap_quantity, limit=self.heatmap_limit,
                           x_stride=self.heatmap_x_stride, t_stride=self.heatmap_t_stride)

    def velocities(self) -> Tuple[float, ...]:
        """`v_list` if given, else v_min, v_min + v_step, ... up to v_max."""
        if self.v_list:
            return self.v_list
        if self.v_min is None or self.v_max is None or self.v_step is None:
            return ()
        count = int(round((self.v_max - self.v_min) / self.v_step))
        if self.v_min + count * self.v_step > self.v_max + 1e-12:
            count -= 1
        return tuple(round(self.v_min + k * self.v_step, 12) for k in range(count + 1))
