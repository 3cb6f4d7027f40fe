"""Trajectory sampling and exact small-instance oracles.

Sampling follows the standard sequential Born rule: given the conditional
pure state ``psi`` of the chain, outcome 1 fires with probability
``||K_1 psi||^2`` and the state is renormalized along the chosen branch.

Randomness is counter-based: every trajectory index owns a Philox stream
derived from ``(master_seed, domain, index)``, so results are bit-identical
across reruns and worker counts and independent of how trajectories are
batched.  A separate block sampler exists for very large ensembles of short
trajectories where per-index streams would dominate the cost.

Oracles: ``exact_distribution`` enumerates all ``2**n`` outcome strings;
``pattern_event_probability`` evaluates the exact probability that a
trajectory decomposes into a prescribed multiset of excitation patterns
separated by zero-runs of length >= ceil(n**gamma), via a forward dynamic
program over gap lengths.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from itertools import permutations
from math import factorial

import numpy as np

from .config import DEFAULT_TOLS, MAX_EXACT_DISTRIBUTION_LEN, Tolerances
from .core import Matrix, channel_matrix, dagger, vec
from .errors import NormCollapse, TooLarge, TooManyPatterns
from .patterns import default_separation

TIME_CHUNK = 8192
BLOCK_TRAJ = 1 << 16


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

def stream_for(master_seed: int, domain: str, index: int) -> np.random.Generator:
    """Philox stream keyed by ``(master_seed, domain, index)``."""
    raw = hashlib.sha256(
        f"{master_seed}:{domain}:{index}".encode()
    ).digest()[:16]
    key = np.frombuffer(raw, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# --------------------------------------------------------------------------
# initial states
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PureStart:
    """Pure initial state; one shared vector or one row per trajectory."""

    psi: np.ndarray

    def draw(self, u: np.ndarray) -> np.ndarray:
        psi = np.asarray(self.psi, dtype=complex)
        if psi.ndim == 2:
            return psi.copy()
        return np.tile(psi, (len(u), 1))

    consumes_uniform = False


class StationaryStart:
    """Initial state drawn from the eigen-mixture of a density matrix."""

    consumes_uniform = True

    def __init__(self, rho: Matrix):
        w, v = np.linalg.eigh((rho + dagger(rho)) / 2)
        w = np.clip(w, 0.0, None)
        self.weights = w / w.sum()
        self.vectors = v
        self._cum = np.cumsum(self.weights)

    def draw(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._cum, u, side="right")
        idx = np.clip(idx, 0, len(self.weights) - 1)
        return self.vectors[:, idx].T.copy()


@dataclass(frozen=True)
class Trajectory:
    """Binary outcome sequence with its seed provenance."""

    bits: np.ndarray
    master_seed: int
    index: int

    @property
    def n(self) -> int:
        return self.bits.size


# --------------------------------------------------------------------------
# samplers
# --------------------------------------------------------------------------

def _step(states, ops, u_col, tols):
    """Advance a batch of conditional states by one measurement step."""
    if ops[0].ndim == 2:
        a0 = states @ ops[0].T
        a1 = states @ ops[1].T
    else:  # per-trajectory operators, shape (B, D, D)
        a0 = np.matmul(ops[0], states[:, :, None])[:, :, 0]
        a1 = np.matmul(ops[1], states[:, :, None])[:, :, 0]
    p1 = np.einsum("ij,ij->i", a1, a1.conj()).real
    p0 = np.einsum("ij,ij->i", a0, a0.conj()).real
    out = u_col < p1
    norm_sq = np.where(out, p1, p0)
    if norm_sq.min() < tols.norm_collapse**2:
        raise NormCollapse(
            f"conditional state norm^2 = {norm_sq.min():.3e} during sampling"
        )
    states = np.where(out[:, None], a1, a0) / np.sqrt(norm_sq)[:, None]
    return states, out


def sample_ensemble(
    ops,
    initial,
    n: int,
    master_seed: int,
    indices,
    domain: str = "traj",
    tols: Tolerances = DEFAULT_TOLS,
) -> np.ndarray:
    """Sample trajectories for the given indices in vectorized lockstep.

    Each index consumes its own stream (one initial draw when the start is
    a mixture, then one uniform per step, drawn in time chunks), so the
    result for an index never depends on which other indices are in the
    batch.  Returns a ``(len(indices), n)`` uint8 array.
    """
    indices = list(indices)
    gens = [stream_for(master_seed, domain, i) for i in indices]
    b = len(indices)
    if initial.consumes_uniform:
        u0 = np.array([g.random() for g in gens])
    else:
        u0 = np.zeros(b)
    states = initial.draw(u0).astype(complex)
    bits = np.empty((b, n), dtype=np.uint8)
    t = 0
    while t < n:
        span = min(TIME_CHUNK, n - t)
        u = np.empty((b, span))
        for r, g in enumerate(gens):
            u[r] = g.random(span)
        for s in range(span):
            states, out = _step(states, ops, u[:, s], tols)
            bits[:, t + s] = out
        t += span
    return bits


def sample_trajectory(
    ops,
    initial,
    n: int,
    master_seed: int,
    index: int,
    domain: str = "traj",
    tols: Tolerances = DEFAULT_TOLS,
) -> Trajectory:
    """Sample one trajectory; identical to the matching ensemble row."""
    bits = sample_ensemble(ops, initial, n, master_seed, [index], domain, tols)
    return Trajectory(bits[0], master_seed, index)


def sample_block(
    ops,
    initial,
    n: int,
    n_traj: int,
    master_seed: int,
    domain: str = "block",
    tols: Tolerances = DEFAULT_TOLS,
) -> np.ndarray:
    """Sample a large ensemble of short trajectories.

    Uniforms come from one stream per block of ``BLOCK_TRAJ`` trajectories
    (initial draws first, then a time-major matrix), which keeps stream
    setup off the critical path.  Deterministic in ``(master_seed, domain)``.
    """
    out = np.empty((n_traj, n), dtype=np.uint8)
    done = 0
    block_id = 0
    while done < n_traj:
        take = min(BLOCK_TRAJ, n_traj - done)
        g = stream_for(master_seed, domain + "-block", block_id)
        u0 = g.random(take) if initial.consumes_uniform else np.zeros(take)
        states = initial.draw(u0).astype(complex)
        u = g.random((take, n))
        for s in range(n):
            states, o = _step(states, ops, u[:, s], tols)
            out[done : done + take, s] = o
        done += take
        block_id += 1
    return out


# --------------------------------------------------------------------------
# exact distribution oracle
# --------------------------------------------------------------------------

def exact_distribution(
    ops,
    rho0: Matrix,
    n: int,
    tols: Tolerances = DEFAULT_TOLS,
) -> np.ndarray:
    """Probabilities of all ``2**n`` outcome strings.

    The returned array is indexed by the outcome string read as a binary
    integer with the *first* outcome in the most significant bit.
    """
    if n > MAX_EXACT_DISTRIBUTION_LEN:
        raise TooLarge(
            f"n={n} exceeds exact-distribution cap {MAX_EXACT_DISTRIBUTION_LEN}"
        )
    states = np.asarray(rho0, dtype=complex)[None, :, :]
    for _ in range(n):
        s0 = np.einsum("ij,mjk,lk->mil", ops[0], states, ops[0].conj())
        s1 = np.einsum("ij,mjk,lk->mil", ops[1], states, ops[1].conj())
        states = np.stack([s0, s1], axis=1).reshape(-1, *states.shape[1:])
    probs = np.einsum("mii->m", states).real
    total = probs.sum()
    if abs(total - 1.0) > tols.probability_sum:
        raise NormCollapse(f"exact distribution sums to {total}")
    return probs


def bits_to_index(bits) -> int:
    """Outcome string -> integer index used by :func:`exact_distribution`."""
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


# --------------------------------------------------------------------------
# pattern-event probability (transfer-operator dynamic program)
# --------------------------------------------------------------------------

class _Ring:
    """Fixed-depth history of vectors indexed by time step."""

    def __init__(self, depth: int, dim: int):
        self.depth = depth
        self.buf = np.zeros((depth, dim), dtype=complex)
        self.latest = -1

    def read(self, t: int) -> np.ndarray:
        if t < 0 or t > self.latest:
            return np.zeros(self.buf.shape[1], dtype=complex)
        if self.latest - t >= self.depth:
            raise RuntimeError("ring buffer too shallow")
        return self.buf[t % self.depth]

    def push(self, t: int, v: np.ndarray) -> None:
        self.buf[t % self.depth] = v
        self.latest = t


def _distinct_orderings(instances: list[str]):
    seen = set()
    for perm in permutations(instances):
        if perm not in seen:
            seen.add(perm)
            yield perm


def _ordering_count(counts: dict[str, int]) -> int:
    q = sum(counts.values())
    c = factorial(q)
    for m in counts.values():
        c //= factorial(m)
    return c


def pattern_event_probability(
    ops,
    rho0: Matrix,
    n: int,
    counts: dict[str, int],
    gamma: float,
    max_orderings: int = 720,
    tols: Tolerances = DEFAULT_TOLS,
) -> float:
    """Exact probability that the trajectory realizes the pattern multiset
    ``counts`` with all inter-pattern zero-runs >= ceil(n**gamma).

    For each distinct ordering of the pattern instances the probability is a
    sum over gap lengths of transfer-operator products; the sum is evaluated
    by a forward dynamic program whose cost is O(n * instances) matrix-vector
    products on the vectorized state.  Orderings of the multiset are summed
    (distinct orderings produce disjoint outcome sets).
    """
    s = default_separation(n, gamma)
    instances: list[str] = []
    for pattern, m in sorted(counts.items()):
        if m < 0:
            raise ValueError("negative pattern count")
        instances.extend([pattern] * m)
    q = len(instances)
    dim = rho0.shape[0] ** 2
    m0 = channel_matrix([np.asarray(ops[0])], "schrodinger")
    v0 = vec(np.asarray(rho0, dtype=complex))
    tr = vec(np.eye(rho0.shape[0]))

    if q == 0:
        v = v0
        for _ in range(n):
            v = m0 @ v
        return float(np.real(tr @ v))

    total_len = sum(len(p) for p in instances)
    if n < total_len + (q - 1) * s:
        return 0.0
    n_orderings = _ordering_count(counts)
    if n_orderings > max_orderings:
        raise TooManyPatterns(
            f"{n_orderings} orderings exceed the budget {max_orderings}"
        )

    m1 = channel_matrix([np.asarray(ops[1])], "schrodinger")

    def pattern_matrix(pattern: str) -> Matrix:
        m = np.eye(dim, dtype=complex)
        for bit in pattern:  # earliest step applied first
            m = (m1 if bit == "1" else m0) @ m
        return m

    mats = {p: pattern_matrix(p) for p in set(instances)}
    # gap accumulator g_j(t) = sum_{x >= s} M0^x u_j(t - x) obeys
    # g_j(t) = M0 g_j(t-1) + M0^s u_j(t-s); the s-step evolution of the
    # entering vector is a precomputed matrix power.
    m0_gap = np.linalg.matrix_power(m0, s) if q >= 2 else None

    total = 0.0
    for ordering in _distinct_orderings(instances):
        lens = [len(p) for p in ordering]
        pmats = [mats[p] for p in ordering]
        h = _Ring(lens[0] + 2, dim)
        h.push(0, v0)
        g_rings = [_Ring(lens[j + 1] + 2, dim) for j in range(q - 1)]
        u_rings = [_Ring(s + 2, dim) for _ in range(q - 1)]
        for r in g_rings + u_rings:
            r.push(0, np.zeros(dim, dtype=complex))
        acc = np.zeros(dim, dtype=complex)
        h_cur = v0
        for t in range(1, n + 1):
            new_g = [
                m0 @ g_rings[j].read(t - 1) + m0_gap @ u_rings[j].read(t - s)
                for j in range(q - 1)
            ]
            u_vals = [pmats[0] @ h.read(t - lens[0])]
            for j in range(1, q):
                u_vals.append(pmats[j] @ g_rings[j - 1].read(t - lens[j]))
            h_cur = m0 @ h_cur
            acc = m0 @ acc + u_vals[-1]
            h.push(t, h_cur)
            for j in range(q - 1):
                g_rings[j].push(t, new_g[j])
                u_rings[j].push(t, u_vals[j])
        total += float(np.real(tr @ acc))
    return total


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def write_packed(path, bits: np.ndarray) -> None:
    """Packed-bit trajectory file: 8-byte little-endian length, then bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", bits.size))
        fh.write(np.packbits(bits).tobytes())


def read_packed(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        packed = np.frombuffer(fh.read(), dtype=np.uint8)
    return np.unpackbits(packed)[:n]


def write_bits_csv(path, bits: np.ndarray) -> None:
    """Debug CSV: header row then one 0/1 per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bit\n")
        fh.writelines(f"{int(b)}\n" for b in bits)


# --------------------------------------------------------------------------
# sampler / oracle comparison
# --------------------------------------------------------------------------

def chi_square_gof(
    observed: np.ndarray, probs: np.ndarray, min_expected: float = 5.0
) -> tuple[float, float]:
    """Chi-squared goodness of fit of string counts against exact
    probabilities, pooling cells with small expectation.  Returns
    ``(statistic, p_value)``."""
    from scipy.stats import chi2

    n = observed.sum()
    expected = probs * n
    order = np.argsort(-expected)
    obs_sorted = observed[order].astype(float)
    exp_sorted = expected[order]
    keep = exp_sorted >= min_expected
    if keep.sum() < 2:
        raise ValueError("not enough well-populated cells for a GOF test")
    tail_obs = obs_sorted[~keep].sum()
    tail_exp = exp_sorted[~keep].sum()
    obs_cells = obs_sorted[keep]
    exp_cells = exp_sorted[keep]
    if tail_exp > 0:
        obs_cells = np.append(obs_cells, tail_obs)
        exp_cells = np.append(exp_cells, tail_exp)
    stat = float(((obs_cells - exp_cells) ** 2 / exp_cells).sum())
    dof = len(exp_cells) - 1
    return stat, float(chi2.sf(stat, dof))
