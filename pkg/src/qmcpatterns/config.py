"""Central numerical-tolerance record.

Every tolerance used by the library lives here so that the whole stack can
be tightened or relaxed in one place.  The defaults are deliberate choices,
not measured constants; tests pin behaviour against ``DEFAULT_TOLS``.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # Kraus / density-matrix validation
    completeness: float = 1e-10
    hermiticity: float = 1e-10
    trace_one: float = 1e-10
    eigenvalue_floor: float = -1e-10

    # stationary state and primitivity
    fixed_point: float = 1e-9
    peripheral_margin: float = 1e-10

    # resolvent
    centered_input: float = 1e-8

    # finite differences and gauge fixing
    fd_step: float = 1e-5
    fd_step2: float = 1e-4
    fd_residual: float = 1e-6
    gauge_residual: float = 1e-10

    # absorber construction
    purification_floor: float = 1e-12
    purification_roundtrip: float = 1e-9
    absorber_unitarity: float = 1e-10
    completion_floor: float = 1e-8
    joint_identity: float = 1e-9
    joint_mismatch: float = 1e-8

    # pattern-mode quantities
    gauge_violation: float = 1e-6
    intensity_consistency: float = 1e-6

    # trajectory sampling and oracles
    norm_collapse: float = 1e-14
    state_norm: float = 1e-9
    probability_sum: float = 1e-9


DEFAULT_TOLS = Tolerances()

# exact-computation size caps (chain lengths)
MAX_EXACT_DISTRIBUTION_LEN = 12
MAX_CHAIN_OPERATOR_LEN = 18
MAX_EXACT_OUTPUT_LEN = 16
