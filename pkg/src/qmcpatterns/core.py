"""Linear-algebra substrate for binary-outcome quantum Markov chains.

A chain is specified by a pair of Kraus operators ``(K_0, K_1)`` acting on a
``d``-dimensional system, one per measurement outcome of the fresh two-level
noise unit.  This module provides the transition superoperators in both
pictures, stationary states, spectral gaps, the reduced resolvent
``(Id - T)^{-1}`` on the centered subspace, finite-difference derivatives of
parametric families, and the gauge fixing that removes the free complex
phase of the Kraus pair.

Conventions
-----------
* Matrices are complex numpy arrays; vectorization is column-stacking
  (``ravel(order="F")``), so a map ``X -> A X B`` has matrix
  ``kron(B.T, A)``.
* ``heisenberg`` picture: ``T(X) = sum_i K_i^dag X K_i`` (unital);
  ``schrodinger`` picture: ``T_*(rho) = sum_i K_i rho K_i^dag``
  (trace preserving).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
import scipy.linalg as sla

from .config import DEFAULT_TOLS, Tolerances
from .errors import (
    DimensionMismatch,
    DomainExit,
    InputNotCentered,
    NotPrimitive,
    StepTooLarge,
)

Matrix = np.ndarray
Picture = Literal["heisenberg", "schrodinger"]


# --------------------------------------------------------------------------
# basic helpers
# --------------------------------------------------------------------------

def _frozen(a: np.ndarray) -> np.ndarray:
    """Return a read-only complex copy of ``a``."""
    out = np.array(a, dtype=complex)
    out.setflags(write=False)
    return out


def vec(x: Matrix) -> np.ndarray:
    """Column-stack a matrix into a vector."""
    return np.asarray(x).ravel(order="F")


def unvec(v: np.ndarray) -> Matrix:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    d = int(round(np.sqrt(v.size)))
    return v.reshape(d, d, order="F")


def dagger(a: Matrix) -> Matrix:
    return a.conj().T


def imag_part(a: Matrix) -> Matrix:
    """Anti-Hermitian part over ``i``: ``(A - A^dag) / 2i`` (Hermitian)."""
    return (a - dagger(a)) / 2j


def completeness_defect(ops: Sequence[Matrix]) -> float:
    """Spectral-norm distance of ``sum_i K_i^dag K_i`` from the identity."""
    d = ops[0].shape[0]
    acc = sum(dagger(k) @ k for k in ops)
    return float(np.linalg.norm(acc - np.eye(d), ord=2))


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KrausFamily:
    """Binary-outcome Kraus pair ``(k0, k1)`` on a ``d``-dimensional system.

    The completeness relation ``k0^dag k0 + k1^dag k1 = 1`` is validated at
    construction time.
    """

    k0: Matrix
    k1: Matrix

    def __post_init__(self):
        k0 = _frozen(self.k0)
        k1 = _frozen(self.k1)
        object.__setattr__(self, "k0", k0)
        object.__setattr__(self, "k1", k1)
        if k0.ndim != 2 or k0.shape[0] != k0.shape[1] or k0.shape != k1.shape:
            raise DimensionMismatch(
                f"Kraus operators must be square and equal-sized, got "
                f"{k0.shape} and {k1.shape}"
            )
        if not (np.isfinite(k0).all() and np.isfinite(k1).all()):
            raise ValueError("Kraus operators contain non-finite entries")
        defect = completeness_defect((k0, k1))
        if defect > DEFAULT_TOLS.completeness:
            raise ValueError(
                f"completeness defect {defect:.3e} exceeds tolerance "
                f"{DEFAULT_TOLS.completeness:.1e}"
            )

    @property
    def d(self) -> int:
        return self.k0.shape[0]

    @property
    def ops(self) -> tuple[Matrix, Matrix]:
        return (self.k0, self.k1)


@dataclass(frozen=True)
class ParametricModel:
    """Differentiable map ``theta -> KrausFamily`` on an open interval.

    ``kraus_at`` must be a picklable callable so that models can be shipped
    to worker processes.  ``fd_step`` / ``fd_step2`` are the central
    finite-difference steps for first and second derivatives.
    """

    theta_domain: tuple[float, float]
    kraus_at: Callable[[float], KrausFamily]
    fd_step: float = DEFAULT_TOLS.fd_step
    fd_step2: float = DEFAULT_TOLS.fd_step2

    def __post_init__(self):
        lo, hi = self.theta_domain
        if not lo < hi:
            raise ValueError("theta_domain must be a nonempty open interval")

    def contains(self, theta: float, margin: float = 0.0) -> bool:
        lo, hi = self.theta_domain
        return lo + margin < theta < hi - margin


@dataclass(frozen=True)
class Superoperator:
    """Matrix form of a channel acting on column-vectorized matrices."""

    d: int
    mat: Matrix
    picture: Picture

    def apply(self, x: Matrix) -> Matrix:
        if x.shape != (self.d, self.d):
            raise DimensionMismatch(f"expected {self.d}x{self.d} input")
        return unvec(self.mat @ vec(x))


def validate_density_matrix(rho: Matrix, tols: Tolerances = DEFAULT_TOLS) -> Matrix:
    """Check Hermiticity, unit trace and positivity; return a frozen copy."""
    rho = np.asarray(rho, dtype=complex)
    if np.linalg.norm(rho - dagger(rho)) > tols.hermiticity:
        raise ValueError("density matrix is not Hermitian within tolerance")
    if abs(np.trace(rho).real - 1.0) > tols.trace_one:
        raise ValueError("density matrix trace differs from 1")
    w = np.linalg.eigvalsh((rho + dagger(rho)) / 2)
    if w.min() < tols.eigenvalue_floor:
        raise ValueError(f"density matrix has negative eigenvalue {w.min():.3e}")
    return _frozen(rho)


# --------------------------------------------------------------------------
# transition maps
# --------------------------------------------------------------------------

def apply_channel(ops: Sequence[Matrix], x: Matrix, picture: Picture) -> Matrix:
    """Apply ``sum_i K_i^dag x K_i`` (heisenberg) or ``sum_i K_i x K_i^dag``
    (schrodinger) for an arbitrary Kraus list."""
    d = ops[0].shape[0]
    if x.shape != (d, d):
        raise DimensionMismatch(f"operand is {x.shape}, Kraus dimension is {d}")
    if picture == "heisenberg":
        return sum(dagger(k) @ x @ k for k in ops)
    if picture == "schrodinger":
        return sum(k @ x @ dagger(k) for k in ops)
    raise ValueError(f"unknown picture {picture!r}")


def transition_apply(kraus: KrausFamily, x: Matrix, picture: Picture) -> Matrix:
    """One step of the Markov transition map applied to ``x``."""
    return apply_channel(kraus.ops, x, picture)


def channel_matrix(ops: Sequence[Matrix], picture: Picture) -> Matrix:
    """d^2 x d^2 matrix of the transition map on column-vectorized input."""
    if picture == "heisenberg":
        return sum(np.kron(k.T, dagger(k)) for k in ops)
    if picture == "schrodinger":
        return sum(np.kron(k.conj(), k) for k in ops)
    raise ValueError(f"unknown picture {picture!r}")


def transition_superoperator(kraus: KrausFamily, picture: Picture) -> Superoperator:
    return Superoperator(kraus.d, _frozen(channel_matrix(kraus.ops, picture)), picture)


# --------------------------------------------------------------------------
# stationary state, primitivity, spectral gap
# --------------------------------------------------------------------------

def _transition_spectrum(ops: Sequence[Matrix]) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues / right eigenvectors of the Schrodinger-picture matrix,
    sorted by decreasing modulus."""
    w, v = sla.eig(channel_matrix(ops, "schrodinger"))
    order = np.argsort(-np.abs(w))
    return w[order], v[:, order]


def assert_primitive(ops: Sequence[Matrix], tols: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Raise :class:`NotPrimitive` unless the map has a simple unit eigenvalue
    and no other peripheral eigenvalue.  Returns the sorted eigenvalues."""
    w, _ = _transition_spectrum(ops)
    mods = np.abs(w)
    if abs(mods[0] - 1.0) > 1e-8:
        raise NotPrimitive(f"leading eigenvalue modulus {mods[0]:.12f} is not 1")
    if len(mods) > 1 and mods[1] >= 1.0 - tols.peripheral_margin:
        raise NotPrimitive(
            f"second eigenvalue modulus {mods[1]:.12f} is peripheral; "
            "the chain is not primitive"
        )
    return w


def stationary_state_ops(ops: Sequence[Matrix], tols: Tolerances = DEFAULT_TOLS) -> Matrix:
    """Unique stationary state of an arbitrary Kraus list (generalized form
    of :func:`stationary_state`)."""
    assert_primitive(ops, tols)
    w, v = _transition_spectrum(ops)
    rho = unvec(v[:, 0])
    rho = (rho + dagger(rho)) / 2
    tr = np.trace(rho).real
    if abs(tr) < 1e-14:
        raise NotPrimitive("fixed-point candidate is traceless")
    rho = rho / tr
    residual = np.linalg.norm(apply_channel(ops, rho, "schrodinger") - rho)
    if residual > tols.fixed_point:
        raise NotPrimitive(f"fixed-point residual {residual:.3e} too large")
    return validate_density_matrix(rho, tols)


def stationary_state(kraus: KrausFamily, tols: Tolerances = DEFAULT_TOLS) -> Matrix:
    """Unique faithful stationary state of a primitive chain."""
    return stationary_state_ops(kraus.ops, tols)


def spectral_gap_ops(ops: Sequence[Matrix], tols: Tolerances = DEFAULT_TOLS) -> float:
    """``1 - max{|lambda| : lambda != 1}`` over the transition spectrum."""
    w = assert_primitive(ops, tols)
    if len(w) == 1:
        return 1.0
    return float(1.0 - np.abs(w[1]))


def spectral_gap(kraus: KrausFamily, tols: Tolerances = DEFAULT_TOLS) -> float:
    return spectral_gap_ops(kraus.ops, tols)


# --------------------------------------------------------------------------
# reduced resolvent
# --------------------------------------------------------------------------

def resolvent_apply(
    kraus: KrausFamily,
    x: Matrix,
    rho_ss: Matrix | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> Matrix:
    """Solve ``(Id - T) y = x`` on the subspace ``Tr(rho_ss y) = 0``.

    ``T`` is the Heisenberg-picture transition map.  The input must already
    be centered (``Tr(rho_ss x) = 0``); the solution is the Moore-Penrose
    solution re-centered along the identity.
    """
    if rho_ss is None:
        rho_ss = stationary_state(kraus, tols)
    offset = abs(complex(np.trace(rho_ss @ x)))
    if offset > tols.centered_input:
        raise InputNotCentered(
            f"Tr(rho_ss x) = {offset:.3e} exceeds {tols.centered_input:.1e}"
        )
    d = kraus.d
    t = channel_matrix(kraus.ops, "heisenberg")
    y = unvec(np.linalg.pinv(np.eye(d * d) - t) @ vec(x))
    y = y - np.trace(rho_ss @ y) * np.eye(d)
    return y


def neumann_resolvent(
    kraus: KrausFamily,
    x: Matrix,
    max_terms: int = 100_000,
    increment_tol: float = 1e-12,
) -> Matrix:
    """Truncated Neumann sum ``sum_k T^k(x)`` for centered ``x``.

    Kept as an independent oracle for :func:`resolvent_apply`; the number of
    terms is driven by the measured spectral gap plus an increment cutoff.
    """
    gap = spectral_gap(kraus)
    lam = 1.0 - gap
    n_terms = max_terms
    if lam < 1.0 - 1e-12:
        n_terms = min(max_terms, int(np.ceil(np.log(1e-12) / np.log(lam))) + 10)
    acc = np.zeros_like(x, dtype=complex)
    term = np.asarray(x, dtype=complex)
    for _ in range(n_terms):
        acc += term
        term = apply_channel(kraus.ops, term, "heisenberg")
        if np.linalg.norm(term) < increment_tol:
            break
    return acc


# --------------------------------------------------------------------------
# derivatives and gauge fixing
# --------------------------------------------------------------------------

def kraus_derivatives(
    model: ParametricModel,
    theta: float,
    order: int = 1,
    tols: Tolerances = DEFAULT_TOLS,
) -> tuple[Matrix, Matrix]:
    """Central finite-difference derivatives of the Kraus pair at ``theta``.

    ``order=1`` uses step ``fd_step``; ``order=2`` uses the wider
    ``fd_step2`` to control cancellation.  The returned matrices are raw
    (not gauge fixed).  First-order results are validated against the
    differentiated completeness relation.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    h = model.fd_step if order == 1 else model.fd_step2
    if not model.contains(theta, margin=order * h):
        raise DomainExit(
            f"theta={theta} too close to the boundary of {model.theta_domain} "
            f"for a step of {h}"
        )
    plus = model.kraus_at(theta + h)
    minus = model.kraus_at(theta - h)
    if order == 1:
        dk = tuple((p - m) / (2 * h) for p, m in zip(plus.ops, minus.ops))
        base = model.kraus_at(theta)
        residual = np.linalg.norm(
            sum(dagger(dk_i) @ k_i + dagger(k_i) @ dk_i
                for dk_i, k_i in zip(dk, base.ops))
        )
        if residual > tols.fd_residual:
            raise StepTooLarge(
                f"differentiated completeness residual {residual:.3e} exceeds "
                f"{tols.fd_residual:.1e}; reduce fd_step"
            )
        return dk
    base = model.kraus_at(theta)
    return tuple(
        (p - 2 * b + m) / (h * h)
        for p, b, m in zip(plus.ops, base.ops, minus.ops)
    )


def gauge_sum(kraus: KrausFamily, first: Sequence[Matrix], rho_ss: Matrix) -> complex:
    """``sum_j Tr(rho_ss dK_j^dag K_j)``; zero after gauge fixing."""
    return complex(sum(
        np.trace(rho_ss @ dagger(dk) @ k) for dk, k in zip(first, kraus.ops)
    ))


def gauge_fix(
    kraus: KrausFamily,
    first: Sequence[Matrix],
    rho_ss: Matrix,
    second: Sequence[Matrix] | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> tuple[tuple[Matrix, Matrix], tuple[Matrix, Matrix] | None, float]:
    """Rotate derivatives by the free phase so the stationary expectation of
    ``sum_j dK_j^dag K_j`` vanishes.

    Replaces ``dK_j`` by ``dK_j + i g K_j`` with ``g`` the imaginary part of
    the raw gauge sum (its real part vanishes identically by completeness),
    and corrects second derivatives consistently with a linear phase:
    ``ddK_j -> ddK_j + 2 i g dK_j - g^2 K_j``.  Returns the corrected first
    and second derivatives together with ``g``.
    """
    s = gauge_sum(kraus, first, rho_ss)
    g = s.imag
    fixed_first = tuple(dk + 1j * g * k for dk, k in zip(first, kraus.ops))
    residual = abs(gauge_sum(kraus, fixed_first, rho_ss))
    if residual > tols.gauge_residual:
        raise StepTooLarge(
            f"gauge residual {residual:.3e} after fixing exceeds "
            f"{tols.gauge_residual:.1e}"
        )
    fixed_second = None
    if second is not None:
        fixed_second = tuple(
            ddk + 2j * g * dk - g * g * k
            for ddk, dk, k in zip(second, first, kraus.ops)
        )
    return fixed_first, fixed_second, g


@dataclass(frozen=True)
class LocalModel:
    """Kraus pair, stationary state and gauge-fixed derivatives at a point."""

    theta: float
    kraus: KrausFamily
    rho_ss: Matrix
    dk: tuple[Matrix, Matrix]
    ddk: tuple[Matrix, Matrix]
    gauge_rate: float


def localize(
    model: ParametricModel,
    theta: float,
    tols: Tolerances = DEFAULT_TOLS,
) -> LocalModel:
    """Evaluate a parametric model at ``theta``: Kraus pair, stationary
    state, and gauge-fixed first and second derivatives."""
    kraus = model.kraus_at(theta)
    rho_ss = stationary_state(kraus, tols)
    raw1 = kraus_derivatives(model, theta, order=1, tols=tols)
    raw2 = kraus_derivatives(model, theta, order=2, tols=tols)
    first, second, g = gauge_fix(kraus, raw1, rho_ss, raw2, tols)
    return LocalModel(theta, kraus, rho_ss, first, second, g)
