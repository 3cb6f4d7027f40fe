"""Discrete-time quantum Markov chains with coherent-absorber
post-processing and pattern-counting estimation."""

from .absorber import (
    AbsorberUnitary,
    CompletionRotation,
    JointModel,
    JointParametricModel,
    Purification,
    build_absorber,
    joint_kraus,
    joint_parametric,
    optimize_completion,
    purify,
)
from .core import (
    KrausFamily,
    ParametricModel,
    Superoperator,
    gauge_fix,
    kraus_derivatives,
    resolvent_apply,
    spectral_gap,
    stationary_state,
    transition_apply,
    transition_superoperator,
)
from .estimator import (
    EnsembleSummary,
    EstimationReport,
    ProtocolConfig,
    counting_rate,
    effective_fisher,
    preliminary_estimate,
    run_protocol,
    set_displacement,
    theta_hat,
    u_hat,
)
from .fisher import (
    ModeTable,
    TotalIntensity,
    localize_joint,
    mode_amplitude,
    mode_table,
    qfi_rate,
    total_intensity,
)
from .models import amplitude_damping, paper_qubit_model, random_qubit_model
from .patterns import PatternCounts, default_separation, extract, total_patterns
from .trajectory import (
    Trajectory,
    exact_distribution,
    pattern_event_probability,
    sample_ensemble,
    sample_trajectory,
)

__version__ = "0.1.0"
