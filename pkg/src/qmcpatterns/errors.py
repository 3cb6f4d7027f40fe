"""Exception hierarchy.

``QmcError`` covers numerical-invariant and model failures; ``ConfigError``
covers bad user input (CLI maps them to exit codes 3 and 2 respectively).
"""

from __future__ import annotations


class QmcError(Exception):
    """Base class for numerical / model errors."""


class ConfigError(Exception):
    """Invalid user-supplied configuration."""


class DimensionMismatch(QmcError):
    """Operands act on spaces of different dimension."""


class NotPrimitive(QmcError):
    """Transition map has a degenerate or peripheral unit eigenvalue."""


class InputNotCentered(QmcError):
    """Resolvent input has a nonzero stationary expectation."""


class StepTooLarge(QmcError):
    """Finite-difference derivatives violate the differentiated completeness
    relation beyond tolerance."""


class RankDeficient(QmcError):
    """Stationary state has an eigenvalue too close to zero to purify."""


class NumericalDegeneracy(QmcError):
    """Absorber completion could not be constructed stably."""


class AbsorberMismatch(QmcError):
    """Joint Kraus pair does not annihilate the purification (wrong pairing
    of Kraus family and stationary state)."""


class GaugeViolation(QmcError):
    """Joint derivative has a residual component along the pure stationary
    vector; gauge fixing was skipped or failed."""


class InternalInconsistency(QmcError):
    """Two independent evaluation routes for the same quantity disagree."""


class TooLarge(QmcError):
    """Requested exact computation exceeds the configured size cap."""


class NormCollapse(QmcError):
    """Conditional state norm fell below tolerance during sampling."""


class TooManyPatterns(QmcError):
    """Number of pattern orderings exceeds the configured budget."""


class BadGamma(ConfigError):
    """Separation exponent outside (0, 1)."""


class BadTruncation(ConfigError):
    """Pattern-length truncation must be at least 1."""


class BadFisher(QmcError):
    """Nonpositive Fisher information passed to the estimator."""


class NonIdentifiable(QmcError):
    """Counting-rate objective is flat; the preliminary estimator cannot
    locate a parameter."""


class DomainExit(QmcError):
    """Requested parameter lies outside the model domain."""


class EmptyEnsemble(QmcError):
    """At least two estimates are required."""


class NonIdentifiabilityRisk(UserWarning):
    """Zero displacement requested: counts depend quadratically on the
    parameter offset and its sign cannot be identified."""
