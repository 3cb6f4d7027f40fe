"""Coherent-absorber construction.

The absorber is a second copy of the system that takes each output noise
unit as its own input and reverts the reference dynamics: at the matched
parameter the joint system+absorber chain has a *pure* stationary vector
``chi`` and emits only 0 outcomes.  The unitary acts on absorber (x) noise
unit and is assembled row by row: the outcome-0 rows are fixed by the
reference Kraus pair and the stationary spectrum, the outcome-1 rows are a
deterministic orthonormal completion.

Three deterministic completions are provided:

* ``"gram-schmidt"`` - orthonormalize the canonical basis against the fixed
  rows in lexicographic order and keep the first ``d`` survivors;
* ``"polar"`` - the canonical block form in which the outcome-1 block of
  the 0-input column is positive semidefinite;
* ``"gap-optimized"`` - the polar form rotated on the outcome-1 rows by a
  unitary chosen (by a seeded derivative-free search) to maximize the
  spectral gap of the joint chain.  The joint gap never exceeds the system
  gap, and experimentally the search reaches that bound.

Different completions give different (equally valid) absorbers: the total
output information and the vacuum property are completion-independent, but
individual pattern-mode amplitudes and the joint mixing time are not.  Slow
joint mixing makes the pattern intensities decay slowly with pattern length
and pushes the Poisson asymptotics out to larger chain lengths, which is
why the estimation studies default to the gap-optimized form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import scipy.linalg as sla

from .config import DEFAULT_TOLS, Tolerances
from .core import (
    KrausFamily,
    Matrix,
    ParametricModel,
    _frozen,
    channel_matrix,
    completeness_defect,
    dagger,
    localize,
    spectral_gap_ops,
    stationary_state,
)
from .errors import (
    AbsorberMismatch,
    DimensionMismatch,
    NotPrimitive,
    NumericalDegeneracy,
    RankDeficient,
)

Completion = "Literal['gram-schmidt', 'polar', 'gap-optimized'] | CompletionRotation"


# --------------------------------------------------------------------------
# purification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Purification:
    """Spectral purification of a faithful stationary state.

    ``chi`` lives on system (x) absorber with the system as the first
    tensor factor; ``basis`` holds the stationary eigenvectors as columns
    (decreasing eigenvalue order, deterministic phase).
    """

    d: int
    eigenvalues: np.ndarray
    basis: Matrix
    chi: np.ndarray

    def reduced_system_state(self) -> Matrix:
        """Partial trace of ``|chi><chi|`` over the absorber."""
        m = self.chi.reshape(self.d, self.d)
        return m @ dagger(m)


def purify(rho_ss: Matrix, tols: Tolerances = DEFAULT_TOLS) -> Purification:
    """Purify a faithful density matrix into system (x) absorber.

    Eigenvalues are sorted decreasingly and each eigenvector's largest-
    magnitude entry is rotated to the positive real axis, so the output is
    deterministic up to exact degeneracies.
    """
    rho_ss = np.asarray(rho_ss, dtype=complex)
    lam, p = np.linalg.eigh((rho_ss + dagger(rho_ss)) / 2)
    order = np.argsort(-lam, kind="stable")  # stable: ties keep eigh's order
    lam = lam[order].copy()
    p = p[:, order].copy()
    if lam.min() < tols.purification_floor:
        raise RankDeficient(
            f"stationary eigenvalue {lam.min():.3e} below "
            f"{tols.purification_floor:.1e}; state is not faithful enough"
        )
    for j in range(p.shape[1]):
        k = int(np.argmax(np.abs(p[:, j])))
        p[:, j] *= np.exp(-1j * np.angle(p[k, j]))
    d = rho_ss.shape[0]
    chi = (p * np.sqrt(lam)[None, :]).ravel(order="C")
    lam_out = np.asarray(lam, dtype=float)
    lam_out.setflags(write=False)
    pur = Purification(d, lam_out, _frozen(p), _frozen(chi))
    roundtrip = np.linalg.norm(pur.reduced_system_state() - rho_ss)
    if roundtrip > tols.purification_roundtrip:
        raise RankDeficient(f"purification round trip error {roundtrip:.3e}")
    return pur


# --------------------------------------------------------------------------
# absorber unitary
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AbsorberUnitary:
    """Unitary on absorber (x) noise unit, stored as a 2d x 2d matrix.

    Index convention: ``a * 2 + k`` for absorber level ``a`` and noise
    outcome ``k``, so ``block(k, l)`` is the d x d map from absorber input
    (noise ``l``) to absorber output (noise ``k``).
    """

    v: Matrix

    @property
    def d(self) -> int:
        return self.v.shape[0] // 2

    def block(self, k: int, l: int) -> Matrix:
        return self.v[k::2, l::2]


def _fixed_rows(kraus: KrausFamily, pur: Purification) -> list[np.ndarray]:
    """Outcome-0 rows: v_i[j*2+k] = sqrt(lam_j/lam_i) <i|K_k|j> in the
    stationary eigenbasis."""
    d = kraus.d
    keig = [dagger(pur.basis) @ k @ pur.basis for k in kraus.ops]
    lam = pur.eigenvalues
    rows = []
    for i in range(d):
        v = np.zeros(2 * d, dtype=complex)
        for j in range(d):
            for k in range(2):
                v[j * 2 + k] = np.sqrt(lam[j] / lam[i]) * keig[k][i, j]
        rows.append(v)
    return rows


def _complete_gram_schmidt(
    rows: Sequence[np.ndarray],
    order: Sequence[int] | None,
    tols: Tolerances,
) -> list[np.ndarray]:
    dim = rows[0].size
    d = dim // 2
    candidates = list(range(dim)) if order is None else list(order)
    kept: list[np.ndarray] = []
    for c in candidates:
        e = np.zeros(dim, dtype=complex)
        e[c] = 1.0
        for u in list(rows) + kept:
            e = e - np.vdot(u, e) * u
        nrm = np.linalg.norm(e)
        if nrm < tols.completion_floor:
            continue
        kept.append(e / nrm)
        if len(kept) == d:
            return kept
    raise NumericalDegeneracy(
        f"only {len(kept)} completion vectors survive projection"
    )


def _psd_sqrt(m: Matrix) -> Matrix:
    w, u = np.linalg.eigh((m + dagger(m)) / 2)
    return u @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ dagger(u)


def _complete_polar(
    v00: Matrix, v01: Matrix, tols: Tolerances
) -> tuple[Matrix, Matrix]:
    d = v00.shape[0]
    a10 = _psd_sqrt(np.eye(d) - dagger(v00) @ v00)
    a11 = _psd_sqrt(np.eye(d) - dagger(v01) @ v01)
    if min(np.linalg.svd(a10, compute_uv=False).min(),
           np.linalg.svd(a11, compute_uv=False).min()) < tols.completion_floor:
        raise NumericalDegeneracy(
            "outcome-1 blocks are singular; polar completion unavailable"
        )
    w = -np.linalg.solve(a10, dagger(v00) @ v01) @ np.linalg.inv(a11)
    return a10, w @ a11


@dataclass(frozen=True)
class CompletionRotation:
    """Explicit completion choice: the polar outcome-1 rows left-multiplied
    by ``expm(i * generator)``.  Any Hermitian generator yields a valid
    absorber; instances are picklable and deterministic."""

    generator: np.ndarray

    def unitary(self) -> Matrix:
        h = np.asarray(self.generator, dtype=complex)
        return sla.expm(1j * (h + dagger(h)) / 2)


def build_absorber(
    kraus: KrausFamily,
    pur: Purification,
    completion: Completion = "gram-schmidt",
    candidate_order: Sequence[int] | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> AbsorberUnitary:
    """Assemble the absorber unitary for a reference Kraus family.

    Raises :class:`NumericalDegeneracy` when the requested completion cannot
    be built stably, and validates unitarity of the result.
    """
    d = kraus.d
    rows = _fixed_rows(kraus, pur)
    gram = np.array([[np.vdot(a, b) for b in rows] for a in rows])
    gram_err = np.linalg.norm(gram - np.eye(d))
    if gram_err > 100 * tols.absorber_unitarity:
        raise NumericalDegeneracy(
            f"fixed absorber rows lost orthonormality ({gram_err:.3e}); "
            "is the stationary state consistent with the Kraus family?"
        )
    v = np.zeros((2 * d, 2 * d), dtype=complex)
    for i in range(d):
        v[2 * i, :] = rows[i].conj()
    if completion == "gram-schmidt":
        kept = _complete_gram_schmidt(rows, candidate_order, tols)
        for i in range(d):
            v[2 * i + 1, :] = kept[i].conj()
    elif completion == "polar" or isinstance(completion, CompletionRotation):
        v00 = v[0::2, 0::2]
        v01 = v[0::2, 1::2]
        v10, v11 = _complete_polar(v00, v01, tols)
        if isinstance(completion, CompletionRotation):
            u = completion.unitary()
            v10, v11 = u @ v10, u @ v11
        v[1::2, 0::2] = v10
        v[1::2, 1::2] = v11
    elif completion == "gap-optimized":
        rotation = optimize_completion(kraus, pur, tols=tols)
        return build_absorber(kraus, pur, rotation, candidate_order, tols)
    else:
        raise ValueError(f"unknown completion {completion!r}")
    unit_err = np.linalg.norm(dagger(v) @ v - np.eye(2 * d), ord=2)
    if unit_err > tols.absorber_unitarity:
        raise NumericalDegeneracy(f"absorber unitarity defect {unit_err:.3e}")
    return AbsorberUnitary(_frozen(v))


def optimize_completion(
    kraus: KrausFamily,
    pur: Purification,
    dk: Sequence[Matrix] | None = None,
    restarts: int = 6,
    seed: int = 11,
    tols: Tolerances = DEFAULT_TOLS,
) -> CompletionRotation:
    """Search the completion freedom for the fastest-mixing joint chain.

    The freedom is exactly a left unitary on the outcome-1 rows of the
    polar completion; the search parametrizes it by a Hermitian generator
    and minimizes the second-largest eigenvalue modulus of the joint
    transition map with seeded Nelder-Mead restarts.  The optimum can be
    degenerate; when the (gauge-fixed) Kraus derivatives ``dk`` are given,
    ties are broken toward the rotation that concentrates the most mode
    intensity on the single-click pattern.  Deterministic for a given seed;
    the polar point itself is always a candidate, so the result never mixes
    slower than the polar completion.
    """
    from scipy.optimize import minimize

    d = kraus.d
    base = build_absorber(kraus, pur, "polar", tols=tols)
    a10 = base.block(1, 0)
    a11 = base.block(1, 1)

    def generator(params: np.ndarray) -> np.ndarray:
        h = np.zeros((d, d), dtype=complex)
        k = 0
        for i in range(d):
            h[i, i] = params[k]
            k += 1
        for i in range(d):
            for j in range(i + 1, d):
                h[i, j] = params[k] + 1j * params[k + 1]
                h[j, i] = params[k] - 1j * params[k + 1]
                k += 2
        return h

    kt0 = np.kron(kraus.k0, base.block(0, 0)) + np.kron(kraus.k1, base.block(0, 1))

    def outcome1_op(params: np.ndarray, sys_ops) -> Matrix:
        u = sla.expm(1j * generator(params))
        return np.kron(sys_ops[0], u @ a10) + np.kron(sys_ops[1], u @ a11)

    def second_modulus(params: np.ndarray) -> float:
        kt1 = outcome1_op(params, kraus.ops)
        mods = np.sort(
            np.abs(np.linalg.eigvals(channel_matrix((kt0, kt1), "schrodinger")))
        )
        return float(mods[-2])

    n_params = d * d
    rng = np.random.Generator(np.random.Philox(key=seed))
    candidates = [(second_modulus(np.zeros(n_params)), np.zeros(n_params))]
    for trial in range(restarts):
        x0 = np.zeros(n_params) if trial == 0 else rng.uniform(-np.pi, np.pi, n_params)
        res = minimize(
            second_modulus,
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-11, "maxiter": 2000},
        )
        candidates.append((float(res.fun), np.asarray(res.x)))
    best_val = min(val for val, _ in candidates)
    finalists = [x for val, x in candidates if val <= best_val + 1e-6]
    if dk is not None and len(finalists) > 1:
        chi = pur.chi
        dim = d * d
        proj = np.eye(dim) - np.outer(chi, chi.conj())
        ginv = proj @ np.linalg.pinv(np.eye(dim) - kt0) @ proj
        dkt0 = np.kron(dk[0], base.block(0, 0)) + np.kron(dk[1], base.block(0, 1))
        resolved = ginv @ (dkt0 @ chi)

        def single_click_intensity(params: np.ndarray) -> float:
            w = outcome1_op(params, kraus.ops) @ resolved
            w = w + outcome1_op(params, dk) @ chi
            return abs(np.vdot(w, chi)) ** 2

        finalists.sort(key=single_click_intensity, reverse=True)
    return CompletionRotation(generator(finalists[0]))


def gap_optimized_rotation(
    model: ParametricModel, theta_abs: float, tols: Tolerances = DEFAULT_TOLS
) -> CompletionRotation:
    """Gap-optimized completion for a parametric model at ``theta_abs``,
    with the mode-concentration tie-break enabled."""
    local = localize(model, theta_abs, tols)
    pur = purify(local.rho_ss, tols)
    return optimize_completion(local.kraus, pur, dk=local.dk, tols=tols)


def recovery_kraus(kraus: KrausFamily, rho_ss: Matrix) -> list[Matrix]:
    """Kraus operators ``sqrt(rho) K_l^dag sqrt(rho)^{-1}`` of the recovery
    channel; their transposes in the stationary eigenbasis are the
    outcome-0 absorber blocks."""
    w, p = np.linalg.eigh((rho_ss + dagger(rho_ss)) / 2)
    sq = p @ np.diag(np.sqrt(w)) @ dagger(p)
    sqi = p @ np.diag(1.0 / np.sqrt(w)) @ dagger(p)
    return [sq @ dagger(k) @ sqi for k in kraus.ops]


# --------------------------------------------------------------------------
# joint system + absorber chain
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JointModel:
    """Kraus pair of the system+absorber chain at the matched parameter.

    ``kt0`` fixes the purification vector, ``kt1`` annihilates it; both are
    D x D with ``D = d**2`` (system is the first tensor factor).
    """

    kt0: Matrix
    kt1: Matrix
    purification: Purification
    theta_ref: float

    @property
    def dim(self) -> int:
        return self.kt0.shape[0]

    @property
    def chi(self) -> np.ndarray:
        return self.purification.chi

    @property
    def ops(self) -> tuple[Matrix, Matrix]:
        return (self.kt0, self.kt1)


def combine_joint_ops(
    sys_ops: Sequence[Matrix], absorber: AbsorberUnitary
) -> tuple[Matrix, Matrix]:
    """``Kt_k = sum_l K_l (x) V_{kl}`` for any system operator pair (also
    used for derivatives, which combine linearly)."""
    return tuple(
        sum(np.kron(sys_ops[l], absorber.block(k, l)) for l in range(2))
        for k in range(2)
    )


def joint_kraus(
    absorber: AbsorberUnitary,
    kraus: KrausFamily,
    pur: Purification,
    theta_ref: float,
    tols: Tolerances = DEFAULT_TOLS,
) -> JointModel:
    """Build the joint Kraus pair and validate the defining identities."""
    if absorber.d != kraus.d or pur.d != kraus.d:
        raise DimensionMismatch("absorber / Kraus / purification dimensions differ")
    kt0, kt1 = combine_joint_ops(kraus.ops, absorber)
    chi = pur.chi
    mismatch = np.linalg.norm(kt1 @ chi)
    if mismatch > tols.joint_mismatch:
        raise AbsorberMismatch(
            f"Kt1 chi = {mismatch:.3e}; absorber does not match this Kraus "
            "family / stationary state"
        )
    for name, err in (
        ("Kt0 chi - chi", np.linalg.norm(kt0 @ chi - chi)),
        ("Kt0^dag chi - chi", np.linalg.norm(dagger(kt0) @ chi - chi)),
        ("Kt1 chi", mismatch),
    ):
        if err > tols.joint_identity:
            raise AbsorberMismatch(f"joint identity {name} fails: {err:.3e}")
    defect = completeness_defect((kt0, kt1))
    if defect > tols.completeness:
        raise AbsorberMismatch(f"joint completeness defect {defect:.3e}")
    return JointModel(_frozen(kt0), _frozen(kt1), pur, theta_ref)


@dataclass(frozen=True)
class JointParametricModel:
    """System parameter sweep with the absorber frozen at ``theta_abs``."""

    model: ParametricModel
    theta_abs: float
    absorber: AbsorberUnitary
    matched: JointModel

    def kraus_at(self, theta: float) -> tuple[Matrix, Matrix]:
        return combine_joint_ops(self.model.kraus_at(theta).ops, self.absorber)

    @property
    def chi(self) -> np.ndarray:
        return self.matched.chi


def joint_parametric(
    model: ParametricModel,
    theta_abs: float,
    completion: Completion = "gram-schmidt",
    candidate_order: Sequence[int] | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> JointParametricModel:
    """Freeze an absorber at ``theta_abs`` and return the parametric joint
    chain ``theta -> (Kt_0, Kt_1)``."""
    if not model.contains(theta_abs):
        raise NotPrimitive(f"theta_abs={theta_abs} outside model domain")
    if completion == "gap-optimized":
        completion = gap_optimized_rotation(model, theta_abs, tols)
    kraus = model.kraus_at(theta_abs)
    pur = purify(stationary_state(kraus, tols), tols)
    absorber = build_absorber(kraus, pur, completion, candidate_order, tols)
    matched = joint_kraus(absorber, kraus, pur, theta_abs, tols)
    return JointParametricModel(model, theta_abs, absorber, matched)


def joint_primitivity_report(
    jp: JointParametricModel, theta: float | None = None
) -> tuple[bool, float]:
    """Whether the joint chain is primitive at ``theta`` and its spectral
    gap.  Primitivity of the joint chain does not follow from primitivity of
    the system chain, so callers should check this at runtime."""
    ops = jp.kraus_at(jp.theta_abs if theta is None else theta)
    try:
        return True, spectral_gap_ops(ops)
    except NotPrimitive:
        return False, 0.0
