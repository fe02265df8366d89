"""Deterministic random number generation.

All randomized operations in the package draw from SplitMix64 with an
explicit integer seed. The algorithm below is part of the public contract
and will not change: identical seeds produce identical streams on every
platform. Categorical draws use exact integer cumulative weights, so
sampling from rational distributions is reproducible bit for bit.
"""

from __future__ import annotations

from bisect import bisect_right
from fractions import Fraction
from math import lcm

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 stream over 64-bit outputs."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        if n == 1:
            return 0
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def substream(self, index: int) -> "Rng":
        """Independent child stream; deterministic in (seed, index)."""
        return Rng(_mix(self._state ^ _mix(index + 1)))


class CategoricalSampler:
    """Exact sampler for a rational distribution over 0..n-1.

    Weights are reduced to integer masses over a common denominator; a draw
    is a uniform integer below the total mass, located by binary search.
    """

    def __init__(self, weights: list[Fraction] | tuple[Fraction, ...]):
        den = lcm(*(w.denominator for w in weights)) if weights else 1
        masses = [int(w * den) for w in weights]
        total = sum(masses)
        if total <= 0:
            raise ValueError("all weights are zero")
        self._cum = []
        acc = 0
        for m in masses:
            acc += m
            self._cum.append(acc)
        self._total = total

    def draw(self, rng: Rng) -> int:
        r = rng.randrange(self._total)
        return bisect_right(self._cum, r)
