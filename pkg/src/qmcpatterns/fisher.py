"""Output information rate and pattern-mode intensities.

``qfi_rate`` evaluates the linear growth rate of the output quantum Fisher
information directly from system-level quantities.  The remaining functions
work on the joint system+absorber chain at the matched point: every
excitation pattern ``alpha`` (binary string starting and ending with ``1``)
labels an output mode whose coherent amplitude per unit local parameter is

    mu_alpha = < Kt_{a_k} ... Kt_{a_2} (Kt_1 G dKt_0 + dKt_1) chi | chi >

with ``G`` the inverse of ``1 - Kt_0`` on the orthogonal complement of
``chi``.  The mode intensity is ``|mu_alpha|^2``; intensities sum to a total
that equals one quarter of the information rate, which the code verifies by
evaluating the total through two independent formulas.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .absorber import JointParametricModel, combine_joint_ops
from .config import DEFAULT_TOLS, Tolerances
from .core import (
    KrausFamily,
    Matrix,
    ParametricModel,
    _frozen,
    dagger,
    gauge_fix,
    imag_part,
    kraus_derivatives,
    localize,
    resolvent_apply,
    stationary_state,
    unvec,
    vec,
)
from .errors import (
    BadTruncation,
    GaugeViolation,
    InternalInconsistency,
)


# --------------------------------------------------------------------------
# patterns
# --------------------------------------------------------------------------

def is_pattern(bits: str) -> bool:
    return (
        len(bits) > 0
        and set(bits) <= {"0", "1"}
        and bits[0] == "1"
        and bits[-1] == "1"
    )


def validate_pattern(bits: str) -> str:
    if not is_pattern(bits):
        raise ValueError(f"{bits!r} is not an excitation pattern")
    return bits


def pattern_sort_key(bits: str) -> int:
    """Patterns are ordered by their value as binary integers."""
    return int(bits, 2)


def patterns_up_to(max_len: int) -> list[str]:
    """All excitation patterns of length <= max_len, in canonical order."""
    if max_len < 1:
        raise BadTruncation("max pattern length must be at least 1")
    pats = ["1"]
    for k in range(2, max_len + 1):
        if k == 2:
            pats.append("11")
            continue
        for mid in range(2 ** (k - 2)):
            pats.append("1" + format(mid, f"0{k - 2}b") + "1")
    return sorted(pats, key=pattern_sort_key)


# --------------------------------------------------------------------------
# information rate (system level)
# --------------------------------------------------------------------------

def qfi_rate(
    model: ParametricModel, theta: float, tols: Tolerances = DEFAULT_TOLS
) -> float:
    """Linear growth rate of the output quantum Fisher information.

    Evaluated as
    ``4 sum_i Tr[rho dK_i^dag dK_i]
    + 8 Tr[(sum_i Im(K_i rho dK_i^dag)) R(Im sum_j dK_j^dag K_j)]``
    with gauge-fixed derivatives and ``R`` the reduced resolvent of the
    Heisenberg transition map.
    """
    kraus = model.kraus_at(theta)
    rho = stationary_state(kraus, tols)
    raw = kraus_derivatives(model, theta, order=1, tols=tols)
    dk, _, _ = gauge_fix(kraus, raw, rho, tols=tols)
    direct = sum(np.trace(rho @ dagger(dki) @ dki).real for dki in dk)
    source = sum(imag_part(k @ rho @ dagger(dki)) for k, dki in zip(kraus.ops, dk))
    centered = imag_part(sum(dagger(dki) @ k for dki, k in zip(dk, kraus.ops)))
    resolved = resolvent_apply(kraus, centered, rho, tols)
    value = 4.0 * direct + 8.0 * np.trace(source @ resolved).real
    if value < -1e-8:
        raise InternalInconsistency(f"information rate came out negative: {value}")
    return float(max(value, 0.0))


# --------------------------------------------------------------------------
# joint local data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JointLocalModel:
    """Joint Kraus pair at the matched point with gauge-fixed derivatives.

    ``restricted_inverse`` is ``(1 - Kt_0)^{-1}`` on the orthogonal
    complement of ``chi`` (Moore-Penrose inverse sandwiched between
    projectors; exact because 1 is an eigenvalue of ``Kt_0``).
    """

    theta_ref: float
    kt: tuple[Matrix, Matrix]
    dkt: tuple[Matrix, Matrix]
    ddkt0: Matrix
    chi: np.ndarray
    restricted_inverse: Matrix
    gauge_rate: float

    @property
    def dim(self) -> int:
        return self.kt[0].shape[0]

    @property
    def emission_vector(self) -> np.ndarray:
        """``(Kt_1 G dKt_0 + dKt_1) chi``; its squared norm is the total
        mode intensity."""
        g = self.restricted_inverse
        return self.kt[1] @ (g @ (self.dkt[0] @ self.chi)) + self.dkt[1] @ self.chi


def localize_joint(
    jp: JointParametricModel, tols: Tolerances = DEFAULT_TOLS
) -> JointLocalModel:
    """Gauge-fix the system derivatives at the absorber point and lift them
    to the joint chain (the absorber blocks are frozen, so joint derivatives
    combine linearly)."""
    local = localize(jp.model, jp.theta_abs, tols)
    kt = jp.matched.ops
    dkt = combine_joint_ops(local.dk, jp.absorber)
    ddkt = combine_joint_ops(local.ddk, jp.absorber)
    chi = jp.chi
    overlap = abs(np.vdot(chi, dkt[0] @ chi))
    if overlap > tols.gauge_violation:
        raise GaugeViolation(
            f"<chi| dKt_0 chi> = {overlap:.3e} after gauge fixing"
        )
    d = kt[0].shape[0]
    proj = np.eye(d) - np.outer(chi, chi.conj())
    ginv = proj @ np.linalg.pinv(np.eye(d) - kt[0]) @ proj
    return JointLocalModel(
        jp.theta_abs,
        (kt[0], kt[1]),
        (_frozen(dkt[0]), _frozen(dkt[1])),
        _frozen(ddkt[0]),
        chi,
        _frozen(ginv),
        local.gauge_rate,
    )


# --------------------------------------------------------------------------
# mode amplitudes
# --------------------------------------------------------------------------

def _check_gauge(local: JointLocalModel, tols: Tolerances = DEFAULT_TOLS) -> None:
    overlap = abs(np.vdot(local.chi, local.dkt[0] @ local.chi))
    if overlap > tols.gauge_violation:
        raise GaugeViolation(
            f"<chi| dKt_0 chi> = {overlap:.3e}; derivatives are not gauge fixed"
        )


def mode_amplitude(local: JointLocalModel, pattern: str) -> complex:
    """Coherent amplitude ``mu`` of one excitation-pattern mode."""
    validate_pattern(pattern)
    _check_gauge(local)
    v = local.emission_vector
    for bit in pattern[1:]:
        v = local.kt[int(bit)] @ v
    return complex(np.vdot(v, local.chi))


def mode_amplitude_superop(local: JointLocalModel, pattern: str) -> complex:
    """Same amplitude through the transfer-operator route.

    Composes the one-step correlation maps of the pattern, resolves the
    leading factor with the reduced resolvent of the joint Heisenberg map,
    and takes the stationary expectation.  Used to cross-validate
    :func:`mode_amplitude`; the two must agree to high accuracy.
    """
    validate_pattern(pattern)
    kt0, kt1 = local.kt
    dkt0, dkt1 = local.dkt
    chi = local.chi
    d = local.dim

    def heis(x):
        return dagger(kt0) @ x @ kt0 + dagger(kt1) @ x @ kt1

    def step_up(x):
        return dagger(kt1) @ x @ kt0

    def step_up_dot(x):
        return dagger(dkt1) @ x @ kt0 + dagger(kt1) @ x @ dkt0

    def heis_dot(x):
        return sum(
            dagger(dk) @ x @ k + dagger(k) @ x @ dk
            for dk, k in zip((dkt0, dkt1), (kt0, kt1))
        )

    def compose(bits, x):
        for bit in reversed(bits):
            x = heis(x) if bit == "0" else step_up(x)
        return x

    tmat = sum(np.kron(k.T, dagger(k)) for k in (kt0, kt1))
    full = compose(pattern, np.eye(d))
    resolved = unvec(np.linalg.pinv(np.eye(d * d) - tmat) @ vec(full))
    resolved = resolved - (chi.conj() @ resolved @ chi) * np.eye(d)
    head = chi.conj() @ heis_dot(resolved) @ chi
    tail = chi.conj() @ step_up_dot(compose(pattern[1:], np.eye(d))) @ chi
    return complex(head + tail)


@dataclass(frozen=True)
class ModeEntry:
    pattern: str
    amplitude: complex
    intensity: float


@dataclass(frozen=True)
class ModeTable:
    """Pattern modes up to a truncation length, in canonical order."""

    theta_ref: float
    truncation_len: int
    entries: tuple[ModeEntry, ...]

    def intensity(self, pattern: str) -> float:
        for e in self.entries:
            if e.pattern == pattern:
                return e.intensity
        raise KeyError(pattern)

    def partial_sum(self) -> float:
        return float(sum(e.intensity for e in self.entries))

    def partial_sums_by_length(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for e in self.entries:
            out[len(e.pattern)] = out.get(len(e.pattern), 0.0) + e.intensity
        return out


def mode_table(
    local: JointLocalModel, max_len: int = 12
) -> ModeTable:
    """Amplitudes and intensities of every pattern of length <= max_len.

    Shares prefix products across patterns, so the cost is one matrix-vector
    product per table entry.
    """
    if max_len < 1:
        raise BadTruncation("max pattern length must be at least 1")
    _check_gauge(local)
    w = local.emission_vector
    chi = local.chi
    entries: list[ModeEntry] = []

    def emit(pattern: str, v: np.ndarray) -> None:
        if pattern[-1] == "1":
            mu = complex(np.vdot(v, chi))
            entries.append(ModeEntry(pattern, mu, abs(mu) ** 2))

    def grow(pattern: str, v: np.ndarray) -> None:
        if len(pattern) == max_len:
            return
        for bit in "01":
            nv = local.kt[int(bit)] @ v
            emit(pattern + bit, nv)
            grow(pattern + bit, nv)

    emit("1", w)
    grow("1", w)
    entries.sort(key=lambda e: pattern_sort_key(e.pattern))
    return ModeTable(local.theta_ref, max_len, tuple(entries))


# --------------------------------------------------------------------------
# total intensity
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TotalIntensity:
    """Total mode intensity with its two evaluation routes.

    ``value`` is the norm form; ``curvature_form`` re-derives it from the
    second derivative of the no-click operator.  Their difference is a
    strong internal consistency check on derivatives and gauge fixing.
    """

    value: float
    norm_form: float
    curvature_form: float

    @property
    def discrepancy(self) -> float:
        return abs(self.norm_form - self.curvature_form)


def total_intensity(
    local: JointLocalModel, tols: Tolerances = DEFAULT_TOLS
) -> TotalIntensity:
    """Sum of all pattern-mode intensities, computed two ways."""
    w = local.emission_vector
    norm_form = float(np.vdot(w, w).real)
    g = local.restricted_inverse
    chi = local.chi
    dkt0 = local.dkt[0]
    curv = -np.vdot(
        chi, (2.0 * dkt0 @ (g @ (dkt0 @ chi)) + local.ddkt0 @ chi)
    ).real
    out = TotalIntensity(norm_form, norm_form, float(curv))
    if out.discrepancy > tols.intensity_consistency:
        raise InternalInconsistency(
            f"total-intensity routes disagree by {out.discrepancy:.3e}"
        )
    return out


def poisson_product_probability(
    table: ModeTable, lam_tot: float, u: float, counts: dict[str, int]
) -> float:
    """Limiting probability ``exp(-lam_tot u^2) prod_a (lam_a u^2)^m_a / m_a!``
    of observing exactly the pattern multiset ``counts``."""
    p = float(np.exp(-lam_tot * u * u))
    for pattern, m in counts.items():
        lam = table.intensity(pattern) * u * u
        p *= lam**m / factorial(m)
    return p


def fisher_from_intensity(local: JointLocalModel, tols: Tolerances = DEFAULT_TOLS) -> float:
    """Information rate computed as four times the total mode intensity."""
    return 4.0 * total_intensity(local, tols).value
