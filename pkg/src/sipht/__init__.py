"""Spin-locked magnetometry with drive-field cancellation (SIPHT).

Field/sequence models, a Bloch-equation propagator, closed-form phase and
contrast models, estimators, and scripted reproductions of the benchmark
scenarios.
"""

from .analytic import (
    ContrastCurve,
    ReadoutModel,
    SweepSpec,
    bs_mod_period,
    contrast_from_phase,
    magnetometry_curve,
    phase_per_tesla,
    phi_nv_analytic,
)
from .estimation import (
    DipolarFit,
    FitError,
    FitResult,
    IdentifiabilityWarning,
    NoNullError,
    PhaseAmplitudeFit,
    SymmetryWarning,
    bs_bounds_from_curve,
    bs_bounds_from_maxima,
    count_local_maxima,
    delta_from_symmetry,
    fit_contrast_curve,
    fit_dipolar,
    fit_phase_amplitude,
    fit_power_law,
    measure_leakage,
    null_search_b_mod,
)
from .fields import (
    GAMMA_NV,
    ZERO_FIELD_SPLITTING,
    FieldConfig,
    ModulationConfig,
    load_config,
    mw_phase_modulation,
    total_ac_field,
)
from .propagator import (
    IntegrationError,
    PropagatorOptions,
    SpinTrajectory,
    contrast_from_trajectory,
    default_max_step,
    hamiltonian_rfmod,
    propagate,
)
from .sequences import PulseEvent, PulseSequence, build_dd_sequence

__version__ = "0.1.0"
