"""
wallrun command line: relax, collide, scan, analyze.

Exit codes: 0 success, 1 I/O or stored-output error, 2 configuration
error, 3 numerical failure, 4 non-convergence.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from wallrun.core.classifier import (
    OutcomeRecord, classify_outcome, estimate_v1, track_charges, velocity_scan
)
from wallrun.core.evolve import CollisionSetup, compose_collision, run
from wallrun.core.lattice import topological_charge
from wallrun.core.static_solver import (
    KinkKind, StaticProfile, initial_kink_guess, mirror_x, molecule_guess, relax
)
from wallrun.errors import (
    CollisionSetupError, ConfigError, GridTooNarrow, IncompatibleVacua, NumericalInstability,
    RelaxationFailed, SnapshotError
)
from wallrun.log import get_logger, set_level
from wallrun.runner import io
from wallrun.runner.api import Branch, RelaxKind, RunConfig

log = get_logger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

BRANCH_KINDS = {
    Branch.BARE: KinkKind.KINK,
    Branch.PLUS: KinkKind.PSI_PLUS,
    Branch.MINUS: KinkKind.PSI_MINUS,
}

# -------------------------------------------------------------
# Shared steps.
# -------------------------------------------------------------

def load_config(path: Optional[str], overrides: Sequence[str], seed: Optional[int]) -> RunConfig:
    rc = io.read_config(Path(path).read_text()) if path else RunConfig()
    return io.apply_overrides(rc, overrides, seed)

def collision_profiles(rc: RunConfig, log_level: int) -> Tuple[StaticProfile, StaticProfile]:
    """Kink of `left_branch` and the x-mirror of a kink of `right_branch`, relaxed on the profile grid."""
    grid = rc.profile_grid()
    m = rc.model_params()
    relaxed: Dict[Branch, StaticProfile] = {}
    for branch in (rc.left_branch, rc.right_branch):
        if branch not in relaxed:
            guess = initial_kink_guess(grid, BRANCH_KINDS[branch], m)
            relaxed[branch] = relax(guess, m, rc.schedule(), rc.flow_settings(), log_level)
    return relaxed[rc.left_branch], mirror_x(relaxed[rc.right_branch])

def collision_template(rc: RunConfig, log_level: int) -> CollisionSetup:
    left, right = collision_profiles(rc, log_level)
    return CollisionSetup(left, right, rc.x_left, rc.x_right, rc.v_left, rc.v_right, rc.lam)

def run_velocity(rc: RunConfig) -> float:
    return rc.v_left

def profile_report(name: str, p: StaticProfile) -> str:
    return (
        f'{name}: E={p.energy:.10g} Q={topological_charge(p.state):g} '
        f'first_integral_max={p.first_integral_max:.3e} static_residual_max={p.static_residual_max:.3e} '
        f'method={p.method.value} iterations={p.iterations_used} converged={str(p.converged).lower()}'
    )

def degeneracy_report(plus: StaticProfile, minus: StaticProfile) -> str:
    return (
        f'psi branches: |dE|={abs(plus.energy - minus.energy):.3e} '
        f'max|dphi|={float(np.max(np.abs(plus.state.phi - minus.state.phi))):.3e} '
        f'max|psi+ + psi-|={float(np.max(np.abs(plus.state.psi + minus.state.psi))):.3e}'
    )

# -------------------------------------------------------------
# Subcommands.
# -------------------------------------------------------------

def cmd_relax(rc: RunConfig, out: Path, log_level: int = logging.INFO) -> int:
    grid = rc.grid()
    m = rc.model_params()
    if rc.relax_kind is RelaxKind.ALL:
        kinds = [RelaxKind.KINK, RelaxKind.ANTIKINK, RelaxKind.PSI_PLUS, RelaxKind.PSI_MINUS, RelaxKind.MOLECULE]
    else:
        kinds = [rc.relax_kind]

    io.write_text(out / io.CONFIG_FILE, io.write_config(rc))
    profiles: Dict[RelaxKind, StaticProfile] = {}
    lines: List[str] = []
    status = EXIT_OK
    for kind in kinds:
        if kind is RelaxKind.MOLECULE:
            guess = molecule_guess(grid)
        else:
            guess = initial_kink_guess(grid, KinkKind(kind.value), m)
        try:
            profile = relax(guess, m, rc.schedule(), rc.flow_settings(), log_level)
        except RelaxationFailed as e:
            log.error(f'{kind.value}: {e}')
            profile = e.best
            status = EXIT_NOT_CONVERGED
        profiles[kind] = profile
        io.write_text(out / io.PROFILE_DIR / f'{kind.value}.csv', io.write_snapshot(profile.state))
        lines.append(profile_report(kind.value, profile))

    if RelaxKind.PSI_PLUS in profiles and RelaxKind.PSI_MINUS in profiles:
        lines.append(degeneracy_report(profiles[RelaxKind.PSI_PLUS], profiles[RelaxKind.PSI_MINUS]))
    report = '\n'.join(lines) + '\n'
    io.write_text(out / 'report.txt', report)
    print(report, end='')
    return status

def cmd_collide(rc: RunConfig, out: Path, log_level: int = logging.INFO) -> int:
    setup = collision_template(rc, log_level)
    grid = rc.grid()
    s0 = compose_collision(setup, grid)
    trajectory = run(s0, rc.model_params(), rc.evolve_config(), profiles=(setup.left, setup.right),
                     center=setup.center, log_level=log_level)
    track = track_charges(trajectory, rc.thresholds())
    record = replace(classify_outcome(trajectory, track, rc.thresholds()), velocity=run_velocity(rc))

    io.write_trajectory(out, rc, trajectory)
    io.write_text(out / io.OUTCOME_FILE, io.write_outcome(record))
    print(io.write_outcome(record), end='')
    return EXIT_OK

def scan_table(records: Sequence[OutcomeRecord]) -> str:
    lines = ['velocity,outcome,final_Q,radiated_energy_fraction,asymmetry_index,oscillation_period,breather_like,failure']
    for r in records:
        period = 'none' if r.oscillation_period is None else repr(r.oscillation_period)
        lines.append(
            f'{r.velocity!r},{r.outcome.value},{r.final_Q!r},{r.radiated_energy_fraction!r},'
            f'{r.asymmetry_index!r},{period},{str(r.breather_like).lower()},{r.failure or "none"}'
        )
    threshold = estimate_v1(records)
    if threshold is not None:
        lines.append(f'# v1={threshold[0]!r} +- {threshold[1]!r}')
    return '\n'.join(lines) + '\n'

def cmd_scan(rc: RunConfig, out: Path, workers: Optional[int] = None, log_level: int = logging.INFO) -> int:
    velocities = rc.velocities()
    io.write_text(out / io.CONFIG_FILE, io.write_config(rc))
    records: List[OutcomeRecord] = []
    if velocities:
        template = collision_template(rc, log_level)
        records = velocity_scan(velocities, rc.model_params(), template, rc.evolve_config(), rc.grid(),
                                rc.thresholds(), workers, log_level)
    for r in records:
        io.write_text(out / 'outcomes' / f'v_{r.velocity:.6f}.txt', io.write_outcome(r))
    table = scan_table(records)
    io.write_text(out / 'scan.csv', table)
    print(table, end='')
    return EXIT_OK

def cmd_analyze(run_dir: Path, out: Path, overrides: Sequence[str] = ()) -> int:
    """Re-classify a stored collide run; only threshold and heatmap overrides change the result."""
    rc, trajectory = io.read_trajectory(run_dir)
    analysis = io.apply_overrides(rc, overrides)
    track = track_charges(trajectory, analysis.thresholds())
    record = replace(classify_outcome(trajectory, track, analysis.thresholds()), velocity=run_velocity(rc))
    io.write_text(out / io.CONFIG_FILE, io.write_config(analysis))
    io.write_text(out / io.OUTCOME_FILE, io.write_outcome(record))
    (out / io.HEATMAP_FILE).write_bytes(io.write_heatmap(trajectory, analysis.heatmap_spec()))
    print(io.write_outcome(record), end='')
    return EXIT_OK

# -------------------------------------------------------------
# Entry point.
# -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='wallrun', description='Kink relaxation and collision lab for a two-field model')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p: argparse.ArgumentParser, with_config: bool = True):
        if with_config:
            p.add_argument('--config', help='key=value configuration file (defaults when omitted)')
            p.add_argument('--seed', type=int, default=None, help='override rng_seed')
        p.add_argument('--out', help='output directory')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='override one configuration key')
        p.add_argument('--force', action='store_true', help='overwrite existing outputs')
        p.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    common(sub.add_parser('relax', help='relax static kinks and the kink-antikink molecule'))
    common(sub.add_parser('collide', help='evolve and classify one kink-antikink collision'))
    scan = sub.add_parser('scan', help='classify collisions over a list or range of velocities')
    common(scan)
    scan.add_argument('--workers', type=int, default=None, help='worker processes (default: all cores)')
    analyze = sub.add_parser('analyze', help='re-classify a stored collide run')
    analyze.add_argument('run_dir', help='output directory of a collide run')
    common(analyze, with_config=False)
    return parser

def dispatch(args: argparse.Namespace) -> int:
    level = logging.getLevelName(args.log_level)
    set_level(level)
    if args.command == 'analyze':
        run_dir = Path(args.run_dir)
        out = io.prepare_output(Path(args.out) if args.out else run_dir / 'analysis', args.force)
        return cmd_analyze(run_dir, out, args.set)

    rc = load_config(args.config, args.set, args.seed)
    out = io.prepare_output(Path(args.out or f'wallrun_{args.command}'), args.force)
    if args.command == 'relax':
        return cmd_relax(rc, out, level)
    if args.command == 'collide':
        return cmd_collide(rc, out, level)
    return cmd_scan(rc, out, args.workers, level)

def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except (ConfigError, GridTooNarrow, IncompatibleVacua, CollisionSetupError) as e:
        log.error(str(e))
        return EXIT_CONFIG
    except NumericalInstability as e:
        log.error(f'numerical failure: {e}')
        return EXIT_NUMERICAL
    except RelaxationFailed as e:
        log.error(f'no convergence: {e}')
        return EXIT_NOT_CONVERGED
    except (SnapshotError, OSError) as e:
        log.error(str(e))
        return EXIT_IO

if __name__ == '__main__':
    sys.exit(main())
