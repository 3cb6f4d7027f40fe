"""Exact finite-size verification of translationally invariant output modes.

Mode operators live on a chain of n two-level units.  The creation operator
of an excitation pattern is the shift average of the pattern's raised-site
tensor product, scaled by ``1/sqrt(n)``; number and quadrature operators
follow the usual bosonic definitions.  Everything here is exact sparse /
dense linear algebra at small n, used to confirm the asymptotic Fock
structure and the coherent-amplitude limits of the mode statistics.

Chain index convention: the first time step occupies the most significant
bit of the basis index (matching the exact-distribution oracle).
"""

from __future__ import annotations

from math import factorial

import numpy as np
import scipy.sparse as sp

from .config import (
    DEFAULT_TOLS,
    MAX_CHAIN_OPERATOR_LEN,
    MAX_EXACT_OUTPUT_LEN,
    Tolerances,
)
from .core import Matrix, dagger, stationary_state_ops
from .errors import TooLarge
from .fisher import validate_pattern


# --------------------------------------------------------------------------
# chain operators
# --------------------------------------------------------------------------

def _pattern_mask(pattern: str, position: int, n: int) -> int:
    """Bitmask of the raised sites when the pattern starts at ``position``
    (1-based)."""
    mask = 0
    for j, bit in enumerate(pattern):
        if bit == "1":
            mask |= 1 << (n - (position + j))
    return mask


def creation_operator(pattern: str, n: int) -> sp.csr_matrix:
    """Shift-averaged creation operator of ``pattern`` on an n-site chain."""
    validate_pattern(pattern)
    if n > MAX_CHAIN_OPERATOR_LEN:
        raise TooLarge(f"n={n} exceeds chain-operator cap {MAX_CHAIN_OPERATOR_LEN}")
    k = len(pattern)
    if k > n:
        raise TooLarge(f"pattern of length {k} does not fit on {n} sites")
    dim = 1 << n
    basis = np.arange(dim, dtype=np.int64)
    rows, cols = [], []
    for i in range(1, n - k + 2):
        mask = _pattern_mask(pattern, i, n)
        src = basis[(basis & mask) == 0]
        rows.append(src | mask)
        cols.append(src)
    data = np.ones(sum(len(r) for r in rows))
    mat = sp.coo_matrix(
        (data, (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )
    return (mat / np.sqrt(n)).tocsr()


def annihilation_operator(pattern: str, n: int) -> sp.csr_matrix:
    return creation_operator(pattern, n).conj().T.tocsr()


def number_operator(pattern: str, n: int) -> sp.csr_matrix:
    a_star = creation_operator(pattern, n)
    return (a_star @ a_star.conj().T).tocsr()


def position_quadrature(pattern: str, n: int) -> sp.csr_matrix:
    a_star = creation_operator(pattern, n)
    return ((a_star.conj().T + a_star) / np.sqrt(2)).tocsr()


def momentum_quadrature(pattern: str, n: int) -> sp.csr_matrix:
    a_star = creation_operator(pattern, n)
    return ((a_star.conj().T - a_star) / (np.sqrt(2) * 1j)).tocsr()


# --------------------------------------------------------------------------
# Fock states
# --------------------------------------------------------------------------

def fock_state(spec: dict[str, int], n: int) -> np.ndarray:
    """Normalized-product Fock vector: ordered creation powers on the vacuum
    scaled by ``1/sqrt(prod m_a!)``.  Exactly normalized only as n grows."""
    for pattern, m in spec.items():
        validate_pattern(pattern)
        if m < 1:
            raise ValueError("pattern multiplicities must be positive")
    if n > MAX_CHAIN_OPERATOR_LEN:
        raise TooLarge(f"n={n} exceeds chain-operator cap {MAX_CHAIN_OPERATOR_LEN}")
    vec = np.zeros(1 << n, dtype=complex)
    vec[0] = 1.0  # vacuum: all sites 0
    norm = 1.0
    for pattern in sorted(spec, key=lambda p: int(p, 2)):
        a_star = creation_operator(pattern, n)
        for _ in range(spec[pattern]):
            vec = a_star @ vec
        norm *= factorial(spec[pattern])
    return vec / np.sqrt(norm)


def gram_deviation(specs: list[dict[str, int]], n: int) -> float:
    """Largest deviation of the Fock-state Gram matrix from the identity."""
    states = [fock_state(s, n) for s in specs]
    dev = 0.0
    for i, a in enumerate(states):
        for j, b in enumerate(states):
            target = 1.0 if i == j else 0.0
            dev = max(dev, abs(np.vdot(a, b) - target))
    return float(dev)


# --------------------------------------------------------------------------
# exact output states of the joint chain
# --------------------------------------------------------------------------

def output_state_matrix(ops, psi0: np.ndarray, n: int) -> np.ndarray:
    """Joint chain state after n steps, as a (D, 2**n) matrix.

    Row index is the retained system+absorber level; column index is the
    output basis string (first step in the most significant bit).  Columns
    of the matrix are the unnormalized conditional amplitudes.
    """
    if n > MAX_EXACT_OUTPUT_LEN:
        raise TooLarge(f"n={n} exceeds exact-output cap {MAX_EXACT_OUTPUT_LEN}")
    m = np.asarray(psi0, dtype=complex).reshape(-1, 1)
    for _ in range(n):
        m = np.stack([ops[0] @ m, ops[1] @ m], axis=2).reshape(m.shape[0], -1)
    return m


def chain_expectation(mat: np.ndarray, op: sp.spmatrix) -> complex:
    """``<Psi| (1 (x) op) |Psi>`` for a system+output vector in matrix form."""
    mt = mat.T
    return complex(np.vdot(mt, op @ mt))


def exact_mode_expectations(
    ops,
    u_local: float,
    n: int,
    pattern: str,
    initial: str | np.ndarray = "stationary",
    tols: Tolerances = DEFAULT_TOLS,
) -> tuple[float, float, float]:
    """Exact output-state means of the pattern mode's number and quadrature
    operators after n steps.

    ``ops`` is the joint Kraus pair at local parameter ``u_local`` (system
    offset ``u/sqrt(n)`` from the absorber point).  ``initial`` selects the
    start: the stationary state of the perturbed joint chain (an exact
    eigen-mixture) or the matched pure vector is supplied directly via a
    vector argument by callers that need it.

    Returns ``(mean_N, mean_Q, mean_P)``.
    """
    if n > MAX_EXACT_OUTPUT_LEN:
        raise TooLarge(f"n={n} exceeds exact-output cap {MAX_EXACT_OUTPUT_LEN}")
    a_star = creation_operator(pattern, n)
    a_op = a_star.conj().T.tocsr()
    number = (a_star @ a_op).tocsr()

    if isinstance(initial, str) and initial == "stationary":
        rho = stationary_state_ops(ops, tols)
        w, v = np.linalg.eigh((rho + dagger(rho)) / 2)
        weights = np.clip(w, 0.0, None)
        weights = weights / weights.sum()
        branches = [(weights[i], v[:, i]) for i in range(len(weights)) if weights[i] > 1e-15]
    else:
        branches = [(1.0, np.asarray(initial, dtype=complex))]

    mean_n = 0.0
    mean_a = 0.0j
    for weight, psi0 in branches:
        m = output_state_matrix(ops, psi0, n)
        mt = m.T
        lowered = a_op @ mt
        mean_n += weight * float(np.vdot(lowered, lowered).real)
        mean_a += weight * complex(np.vdot(mt, lowered))
    mean_q = np.sqrt(2.0) * mean_a.real
    mean_p = np.sqrt(2.0) * mean_a.imag
    return float(mean_n), float(mean_q), float(mean_p)
