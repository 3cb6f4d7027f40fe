"""Excitation-pattern extraction from binary outcome trajectories.

A trajectory splits at every maximal zero-run of length >= s; after
trimming leading/trailing zeros, each remaining segment is one pattern
occurrence (a binary string starting and ending with 1 whose internal
zero-runs are all shorter than s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadGamma


def default_separation(n: int, gamma: float) -> int:
    """Separation threshold ``ceil(n**gamma)`` for a trajectory of length n."""
    if not 0.0 < gamma < 1.0:
        raise BadGamma(f"gamma must lie in (0, 1), got {gamma}")
    return max(1, math.ceil(n**gamma))


@dataclass(frozen=True)
class PatternCounts:
    """Pattern occurrence counts for one trajectory.

    ``occurrences`` keeps (start offset, pattern) pairs in trajectory order
    so the trajectory can be reconstructed exactly.
    """

    counts: dict[str, int]
    n: int
    separation: int
    occurrences: tuple[tuple[int, str], ...] = field(default=(), repr=False)

    def total(self) -> int:
        return sum(self.counts.values())

    def ones(self) -> int:
        return sum(p.count("1") * m for p, m in self.counts.items())


def extract(bits: np.ndarray, separation: int) -> PatternCounts:
    """Extract pattern counts from a 0/1 array with threshold ``separation``."""
    if separation < 1:
        raise ValueError("separation must be >= 1")
    bits = np.asarray(bits)
    n = bits.size
    ones = np.flatnonzero(bits)
    counts: dict[str, int] = {}
    occurrences: list[tuple[int, str]] = []
    if ones.size:
        # break between consecutive 1s whenever the zero-run is >= separation
        gaps = np.diff(ones) - 1
        breaks = np.flatnonzero(gaps >= separation)
        starts = np.concatenate(([0], breaks + 1))
        ends = np.concatenate((breaks, [ones.size - 1]))
        for s, e in zip(starts, ends):
            lo, hi = ones[s], ones[e]
            pattern = "".join("1" if b else "0" for b in bits[lo : hi + 1])
            counts[pattern] = counts.get(pattern, 0) + 1
            occurrences.append((int(lo), pattern))
    return PatternCounts(counts, n, separation, tuple(occurrences))


def total_patterns(pc: PatternCounts) -> int:
    """Total number of extracted pattern occurrences."""
    return pc.total()


def synthesize(pc: PatternCounts) -> np.ndarray:
    """Rebuild the trajectory from recorded occurrences (round-trip check)."""
    bits = np.zeros(pc.n, dtype=np.uint8)
    for offset, pattern in pc.occurrences:
        seg = np.frombuffer(pattern.encode(), dtype=np.uint8) - ord("0")
        bits[offset : offset + len(pattern)] = seg
    return bits


def counts_csv_lines(pc: PatternCounts) -> list[str]:
    """CSV rows (pattern, count) in canonical pattern order."""
    lines = ["pattern,count"]
    for pattern in sorted(pc.counts, key=lambda p: int(p, 2)):
        lines.append(f"{pattern},{pc.counts[pattern]}")
    return lines
