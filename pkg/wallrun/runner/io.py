"""
Text and image formats of wallrun runs.

- config: key=value, one key per line, `#` comments
- CSV: comma separated, 17 significant digits, LF line endings
- heatmap: binary PPM (P6), maxval 255
- outcome: key=value

A run directory holds config.txt, timeseries.csv, snapshots/, profiles/,
heatmap.ppm and outcome.txt.
"""
import io
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from wallrun.core.classifier import Outcome, OutcomeRecord
from wallrun.core.evolve import Trajectory
from wallrun.core.lattice import DiagnosticsSample, FieldState, Grid, charge_density, energy_density
from wallrun.core.static_solver import RelaxationMethod, StaticProfile, make_profile
from wallrun.errors import ConfigError, SnapshotError
from wallrun.runner.api import AUTO, HeatmapQuantity, HeatmapSpec, RunConfig

CONFIG_FILE = 'config.txt'
TIMESERIES_FILE = 'timeseries.csv'
SNAPSHOT_DIR = 'snapshots'
PROFILE_DIR = 'profiles'
HEATMAP_FILE = 'heatmap.ppm'
OUTCOME_FILE = 'outcome.txt'

TIMESERIES_HEADER = 'time,total_energy,Q,Q_N,first_integral_max,pcac_max'
SNAPSHOT_HEADER = 'x,phi,psi,phi_dot,psi_dot'
FLOAT_FORMAT = '%.17g'

# -------------------------------------------------------------
# Configuration.
# -------------------------------------------------------------

def _format_value(value) -> str:
    if value is None:
        return AUTO
    if isinstance(value, tuple):
        return ','.join(repr(float(v)) for v in value)
    if hasattr(value, 'value'):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    return str(value)

def write_config(rc: RunConfig) -> str:
    lines = ['# wallrun run configuration']
    for key, value in rc.model_dump(by_alias=True).items():
        lines.append(f'{key}={_format_value(value)}')
    return '\n'.join(lines) + '\n'

def _parse_pairs(pairs: Iterable[Tuple[str, str, str]]) -> Dict[str, Tuple[str, str]]:
    """(key, value, where) triples -> {key: (value, where)}, rejecting unknown and repeated keys."""
    known = {field.alias or name for name, field in RunConfig.model_fields.items()}
    seen: Dict[str, Tuple[str, str]] = {}
    for key, value, where in pairs:
        if key not in known:
            raise ConfigError(f'unknown key "{key}"', label=where)
        if key in seen:
            raise ConfigError(f'key "{key}" repeated (first given at {seen[key][1]})', label=where)
        seen[key] = (value, where)
    return seen

def _validate(entries: Dict[str, Tuple[str, str]]) -> RunConfig:
    try:
        return RunConfig.model_validate({key: value for key, (value, _) in entries.items()})
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error['loc'][0]) if error['loc'] else None
        if key == 'lam':
            key = 'lambda'
        where = entries[key][1] if key in entries else (f'key "{key}"' if key else 'config')
        raise ConfigError(f'{key}: {error["msg"]}', label=where) from None

def read_config(text: str) -> RunConfig:
    """
    Parse the key=value format. Missing keys take their defaults.

    Raises:
        ConfigError: malformed line, unknown or repeated key, or a value
            that fails validation; the message names the offending line.
    """
    pairs = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f'expected key=value, got "{raw.strip()}"', line=number)
        key, value = (part.strip() for part in line.split('=', 1))
        pairs.append((key, value, f'line {number}'))
    return _validate(_parse_pairs(pairs))

def apply_overrides(rc: RunConfig, overrides: Sequence[str], seed: Optional[int] = None) -> RunConfig:
    """`key=value` overrides on top of a configuration, validated like the file."""
    base = {key: (_format_value(value), 'config')
            for key, value in rc.model_dump(by_alias=True).items()}
    pairs = []
    for k, item in enumerate(overrides, start=1):
        if '=' not in item:
            raise ConfigError(f'expected key=value, got "{item}"', label=f'override #{k}')
        key, value = (part.strip() for part in item.split('=', 1))
        pairs.append((key, value, f'override #{k}'))
    if seed is not None:
        pairs.append(('rng_seed', str(seed), '--seed'))
    base.update(_parse_pairs(pairs))
    return _validate(base)

# -------------------------------------------------------------
# CSV.
# -------------------------------------------------------------

def _to_csv(table: NDArray, header: str) -> str:
    buffer = io.StringIO()
    np.savetxt(buffer, table, fmt=FLOAT_FORMAT, delimiter=',', header=header, comments='', newline='\n')
    return buffer.getvalue()

def _from_csv(text: str, header: str, what: str) -> NDArray:
    lines = text.split('\n')
    if not lines or lines[0].strip() != header:
        raise SnapshotError(f'{what}: expected header "{header}"')
    try:
        table = np.loadtxt(io.StringIO('\n'.join(lines[1:])), delimiter=',', ndmin=2)
    except ValueError as e:
        raise SnapshotError(f'{what}: {e}') from None
    if table.size and table.shape[1] != len(header.split(',')):
        raise SnapshotError(f'{what}: expected {len(header.split(","))} columns, got {table.shape[1]}')
    return table

def write_timeseries(diagnostics: Sequence[DiagnosticsSample]) -> str:
    table = np.array([
        (d.time, d.total_energy, d.topological_charge, d.noether_charge,
         d.max_first_integral_deviation, d.max_pcac_residual)
        for d in diagnostics
    ], dtype=float).reshape(-1, 6)
    return _to_csv(table, TIMESERIES_HEADER)

def read_timeseries(text: str) -> List[DiagnosticsSample]:
    table = _from_csv(text, TIMESERIES_HEADER, 'timeseries')
    return [DiagnosticsSample(*(float(v) for v in row)) for row in table]

def write_snapshot(s: FieldState) -> str:
    table = np.column_stack([s.grid.x, s.phi, s.psi, s.phi_dot, s.psi_dot])
    return f'# time={FLOAT_FORMAT % s.time}\n' + _to_csv(table, SNAPSHOT_HEADER)

def read_snapshot(text: str) -> FieldState:
    first, _, rest = text.partition('\n')
    if not first.startswith('# time='):
        raise SnapshotError('snapshot: missing "# time=" line')
    try:
        time = float(first[len('# time='):])
    except ValueError:
        raise SnapshotError(f'snapshot: bad time "{first}"') from None
    table = _from_csv(rest, SNAPSHOT_HEADER, 'snapshot')
    if table.shape[0] < 8:
        raise SnapshotError(f'snapshot: {table.shape[0]} rows, need at least 8')
    x = table[:, 0]
    try:
        grid = Grid(x_min=float(x[0]), x_max=float(x[-1]), n=len(x))
    except ValidationError as e:
        raise SnapshotError(f'snapshot: bad grid: {e}') from None
    if np.max(np.abs(grid.x - x)) > 1e-9 * max(1.0, grid.length):
        raise SnapshotError('snapshot: x column is not a uniform grid')
    return FieldState(grid, table[:, 1], table[:, 2], table[:, 3], table[:, 4], time)

# -------------------------------------------------------------
# Heatmap.
# -------------------------------------------------------------

# value -> color table, interpolated linearly per channel.
DIVERGING_VALUES = np.array([-1.0, 0.0, 1.0])
DIVERGING_COLORS = np.array([
    [0, 0, 255],
    [255, 255, 255],
    [255, 0, 0],
], dtype=float)

def diverging_colors(values: NDArray, limit: float) -> NDArray:
    """RGB uint8 array for `values`: -limit blue, 0 white, +limit red."""
    values = np.asarray(values, dtype=float)
    if limit <= 0.0:
        scaled = np.zeros_like(values)
    else:
        scaled = np.clip(values / limit, -1.0, 1.0)
    channels = [np.interp(scaled, DIVERGING_VALUES, DIVERGING_COLORS[:, c]) for c in range(3)]
    return np.rint(np.stack(channels, axis=-1)).astype(np.uint8)

def heatmap_values(trajectory: Trajectory, spec: HeatmapSpec) -> NDArray:
    rows = []
    for s in trajectory.snapshots[::spec.t_stride]:
        if spec.quantity is HeatmapQuantity.CHARGE_DENSITY:
            values = charge_density(s)
        else:
            values = energy_density(s, trajectory.model)
        rows.append(values[::spec.x_stride])
    return np.array(rows)

def write_heatmap(trajectory: Trajectory, spec: Optional[HeatmapSpec] = None) -> bytes:
    """Binary P6 image; rows are snapshots (time downward), columns are x."""
    spec = spec or HeatmapSpec()
    if not trajectory.snapshots:
        raise SnapshotError('cannot draw a heatmap of an empty trajectory')
    values = heatmap_values(trajectory, spec)
    limit = spec.limit if spec.limit is not None else float(np.max(np.abs(values)))
    pixels = diverging_colors(values, limit)
    height, width = values.shape
    return f'P6\n{width} {height}\n255\n'.encode('ascii') + pixels.tobytes()

def read_heatmap(data: bytes) -> NDArray:
    """(height, width, 3) uint8 pixels of a P6 image written by write_heatmap."""
    parts = data.split(b'\n', 3)
    if len(parts) < 4 or parts[0] != b'P6' or parts[2] != b'255':
        raise SnapshotError('not a P6 image with maxval 255')
    width, height = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != width * height * 3:
        raise SnapshotError(f'P6 body holds {pixels.size} bytes, expected {width * height * 3}')
    return pixels.reshape(height, width, 3)

# -------------------------------------------------------------
# Outcome records.
# -------------------------------------------------------------

def _optional(value: Optional[float]) -> str:
    return 'none' if value is None else repr(float(value))

def write_outcome(record: OutcomeRecord) -> str:
    speeds = record.outgoing_speeds or (None, None)
    lines = [
        f'outcome={record.outcome.value}',
        f'velocity={_optional(record.velocity)}',
        f'initial_Q={record.initial_Q!r}',
        f'final_Q={record.final_Q!r}',
        f'outgoing_speed_left={_optional(speeds[0])}',
        f'outgoing_speed_right={_optional(speeds[1])}',
        f'oscillation_period={_optional(record.oscillation_period)}',
        f'radiated_energy_fraction={record.radiated_energy_fraction!r}',
        f'asymmetry_index={record.asymmetry_index!r}',
        f'breather_like={str(record.breather_like).lower()}',
        f'failure={record.failure or "none"}',
        f'charge_flagged={str(record.charge_flagged).lower()}',
    ]
    return '\n'.join(lines) + '\n'

def read_outcome(text: str) -> OutcomeRecord:
    values = {}
    for raw in text.splitlines():
        if raw.strip() and not raw.startswith('#'):
            key, _, value = raw.partition('=')
            values[key.strip()] = value.strip()

    def number(key: str) -> Optional[float]:
        return None if values[key] == 'none' else float(values[key])

    try:
        left, right = number('outgoing_speed_left'), number('outgoing_speed_right')
        return OutcomeRecord(
            outcome=Outcome(values['outcome']),
            initial_Q=float(values['initial_Q']),
            final_Q=float(values['final_Q']),
            radiated_energy_fraction=float(values['radiated_energy_fraction']),
            asymmetry_index=float(values['asymmetry_index']),
            outgoing_speeds=None if left is None else (left, right),
            oscillation_period=number('oscillation_period'),
            breather_like=values['breather_like'] == 'true',
            velocity=number('velocity'),
            failure=None if values['failure'] == 'none' else values['failure'],
            charge_flagged=values.get('charge_flagged', 'false') == 'true',
        )
    except (KeyError, ValueError) as e:
        raise SnapshotError(f'outcome record: {e}') from None

# -------------------------------------------------------------
# Run directories.
# -------------------------------------------------------------

def prepare_output(out: Path, force: bool) -> Path:
    """Create `out`; refuse to reuse a non-empty directory unless forced."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f'{out} already holds outputs; pass --force to overwrite')
    out.mkdir(parents=True, exist_ok=True)
    return out

def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='\n') as f:
        f.write(text)

def write_trajectory(out: Path, rc: RunConfig, trajectory: Trajectory) -> None:
    write_text(out / CONFIG_FILE, write_config(rc))
    write_text(out / TIMESERIES_FILE, write_timeseries(trajectory.diagnostics))
    for k, s in enumerate(trajectory.snapshots):
        write_text(out / SNAPSHOT_DIR / f'snapshot_{k:06d}.csv', write_snapshot(s))
    if trajectory.profiles is not None:
        for name, p in zip(('left', 'right'), trajectory.profiles):
            write_text(out / PROFILE_DIR / f'{name}.csv', write_snapshot(p.state))
    (out / HEATMAP_FILE).write_bytes(write_heatmap(trajectory, rc.heatmap_spec()))

def read_profile(text: str, rc: RunConfig) -> StaticProfile:
    state = read_snapshot(text)
    return make_profile(state.phi, state.psi, state.grid, rc.model_params(), RelaxationMethod.GRADIENT_FLOW,
                        0, [], True)

def read_trajectory(directory: Path) -> Tuple[RunConfig, Trajectory]:
    """Inverse of write_trajectory for everything the classifier reads."""
    directory = Path(directory)
    config_path = directory / CONFIG_FILE
    if not config_path.is_file():
        raise SnapshotError(f'{directory} has no {CONFIG_FILE}')
    rc = read_config(config_path.read_text())
    snapshot_files = sorted((directory / SNAPSHOT_DIR).glob('snapshot_*.csv'))
    if not snapshot_files:
        raise SnapshotError(f'{directory / SNAPSHOT_DIR} holds no snapshots')
    timeseries_path = directory / TIMESERIES_FILE
    if not timeseries_path.is_file():
        raise SnapshotError(f'{directory} has no {TIMESERIES_FILE}')

    profiles = None
    profile_paths = [directory / PROFILE_DIR / f'{name}.csv' for name in ('left', 'right')]
    if all(p.is_file() for p in profile_paths):
        profiles = tuple(read_profile(p.read_text(), rc) for p in profile_paths)

    trajectory = Trajectory(
        rc.model_params(),
        rc.evolve_config(),
        diagnostics=read_timeseries(timeseries_path.read_text()),
        snapshots=[read_snapshot(p.read_text()) for p in snapshot_files],
        profiles=profiles,
        center=0.5 * (rc.x_left + rc.x_right),
    )
    if not math.isclose(trajectory.snapshots[0].time, trajectory.diagnostics[0].time):
        raise SnapshotError('snapshots and time series do not start at the same time')
    return rc, trajectory
