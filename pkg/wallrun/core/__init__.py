from wallrun.core.model import (
        ModelParams, FieldPoint, CriticalPoint, CriticalKind,
        potential, grad_potential, hessian, vacuum_masses, classify_extrema,
        dressed_kink_energy, BARE_KINK_ENERGY
)
from wallrun.core.lattice import (
        Grid, FieldState, DiagnosticsSample,
        energy_density, total_energy, topological_charge, charge_density,
        noether_charge, pcac_residual, first_integral_deviation,
        momentum_density, total_momentum, static_residual, kink_width
)
from wallrun.core.static_solver import (
        KinkKind, RelaxationMethod, RelaxationSchedule, GradientFlowSettings, StaticProfile,
        initial_kink_guess, molecule_guess, dressed_kink_exact,
        relax_stochastic, relax_gradient_flow, relax, mirror_x
)
from wallrun.core.evolve import (
        BoundaryKind, EvolveConfig, CollisionSetup, Trajectory, LeapfrogIntegrator,
        boost_profile, compose_collision, step, run
)
from wallrun.core.classifier import (
        Outcome, ClassifierThresholds, ChargeTrack, OutcomeRecord,
        track_charges, classify_outcome, asymmetry_index, velocity_scan, estimate_v1
)
