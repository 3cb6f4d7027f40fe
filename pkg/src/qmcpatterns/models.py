"""Concrete parametric chain models.

The built-in ``paper-qubit`` model is a qubit coupled to two-level noise
units through a unitary with a known damping strength and emission phase;
the estimated parameter enters both the rotation angle and the excitation
amplitude.  Random exponential families and spline-tabulated families are
provided for stress tests and for user-supplied models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import CubicSpline

from .core import KrausFamily, ParametricModel, spectral_gap, stationary_state
from .errors import NotPrimitive

DEFAULT_DAMPING = 0.8
DEFAULT_EMISSION_PHASE = np.pi / 4
PAPER_QUBIT_DOMAIN = (0.02, 0.9)


@dataclass(frozen=True)
class DampedQubitKraus:
    """Kraus map of the built-in qubit model.

    ``K_0`` is the no-click branch (coherent rotation with damped
    amplitudes); ``K_1`` releases an excitation with amplitude
    ``sqrt(damping) * exp(i*phase)`` from the excited state and ``theta``
    from the ground state.
    """

    damping: float = DEFAULT_DAMPING
    phase: float = DEFAULT_EMISSION_PHASE

    def __call__(self, theta: float) -> KrausFamily:
        c, s = np.cos(theta), np.sin(theta)
        r0 = np.sqrt(1.0 - theta * theta)
        r1 = np.sqrt(1.0 - self.damping)
        k0 = np.array(
            [[c * r0, 1j * s * r1],
             [1j * s * r0, c * r1]],
            dtype=complex,
        )
        k1 = np.array(
            [[0.0, np.sqrt(self.damping) * np.exp(1j * self.phase)],
             [theta, 0.0]],
            dtype=complex,
        )
        return KrausFamily(k0, k1)


def paper_qubit_model(
    damping: float = DEFAULT_DAMPING,
    phase: float = DEFAULT_EMISSION_PHASE,
    theta_domain: tuple[float, float] = PAPER_QUBIT_DOMAIN,
    fd_step: float = 1e-5,
) -> ParametricModel:
    """The built-in qubit model (config name ``paper-qubit``)."""
    return ParametricModel(theta_domain, DampedQubitKraus(damping, phase), fd_step)


# --------------------------------------------------------------------------
# other families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitaryExponentialKraus:
    """``K_i(theta) = <i| exp(i (H0 + theta H1)) |0>`` for Hermitian blocks
    acting on system (x) noise unit."""

    h_base: np.ndarray
    h_coupling: np.ndarray

    def __call__(self, theta: float) -> KrausFamily:
        u = sla.expm(1j * (self.h_base + theta * self.h_coupling))
        d = self.h_base.shape[0] // 2
        # noise unit is the second (fastest) tensor factor
        blocks = u.reshape(d, 2, d, 2)[:, :, :, 0]
        return KrausFamily(blocks[:, 0, :], blocks[:, 1, :])


def random_qubit_model(
    seed: int,
    scale: float = 1.0,
    min_gap: float = 0.05,
    theta_ref: float = 0.13,
    theta_domain: tuple[float, float] = (-1.0, 1.0),
    max_tries: int = 50,
) -> ParametricModel:
    """Random primitive qubit family with a usable spectral gap at
    ``theta_ref``.  Deterministic for a given ``seed``."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    for _ in range(max_tries):
        h0 = _random_hermitian(rng, 4, scale)
        h1 = _random_hermitian(rng, 4, scale)
        model = ParametricModel(theta_domain, UnitaryExponentialKraus(h0, h1))
        try:
            kraus = model.kraus_at(theta_ref)
            if spectral_gap(kraus) >= min_gap:
                stationary_state(kraus)
                return model
        except NotPrimitive:
            continue
    raise NotPrimitive(f"no primitive model found for seed {seed}")


def _random_hermitian(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (a + a.conj().T) / 2


@dataclass(frozen=True)
class PhaseRotatedKraus:
    """Multiply both Kraus operators by ``exp(i rate (theta - pivot))``.

    Physically a re-phasing of the noise-unit basis: every gauge-invariant
    output must be unchanged.
    """

    base: object
    rate: float
    pivot: float

    def __call__(self, theta: float) -> KrausFamily:
        kraus = self.base(theta)
        phase = np.exp(1j * self.rate * (theta - self.pivot))
        return KrausFamily(phase * kraus.k0, phase * kraus.k1)


def phase_rotated(model: ParametricModel, rate: float, pivot: float) -> ParametricModel:
    return ParametricModel(
        model.theta_domain,
        PhaseRotatedKraus(model.kraus_at, rate, pivot),
        model.fd_step,
        model.fd_step2,
    )


class TabulatedKraus:
    """Cubic-spline interpolation of user-supplied Kraus tables.

    The grid must be dense enough that the interpolated pair still satisfies
    the completeness relation at the library tolerance (grid spacing around
    1e-3 is sufficient for smooth families).
    """

    def __init__(self, thetas: np.ndarray, k0s: np.ndarray, k1s: np.ndarray):
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 1 or len(thetas) < 4:
            raise ValueError("need at least 4 grid points")
        self._spline0 = CubicSpline(thetas, np.asarray(k0s, dtype=complex), axis=0)
        self._spline1 = CubicSpline(thetas, np.asarray(k1s, dtype=complex), axis=0)
        self.grid = thetas

    def __call__(self, theta: float) -> KrausFamily:
        return KrausFamily(self._spline0(theta), self._spline1(theta))


def tabulated_model(
    thetas: np.ndarray,
    k0s: np.ndarray,
    k1s: np.ndarray,
    fd_step: float = 1e-5,
) -> ParametricModel:
    thetas = np.asarray(thetas, dtype=float)
    domain = (float(thetas[0]), float(thetas[-1]))
    return ParametricModel(domain, TabulatedKraus(thetas, k0s, k1s), fd_step)


# --------------------------------------------------------------------------
# fixed families for tests and diagnostics
# --------------------------------------------------------------------------

def amplitude_damping(p: float) -> KrausFamily:
    """Decay of the excited state with probability ``p`` per step."""
    k0 = np.array([[1.0, 0.0], [0.0, np.sqrt(1.0 - p)]], dtype=complex)
    k1 = np.array([[0.0, np.sqrt(p)], [0.0, 0.0]], dtype=complex)
    return KrausFamily(k0, k1)


@dataclass(frozen=True)
class ConstantKraus:
    kraus: KrausFamily

    def __call__(self, theta: float) -> KrausFamily:
        return self.kraus


def constant_model(kraus: KrausFamily, domain=(-1.0, 1.0)) -> ParametricModel:
    """Parameter-independent family (zero information at every theta)."""
    return ParametricModel(domain, ConstantKraus(kraus))
