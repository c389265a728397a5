"""Deterministic PRNG: xoshiro256** seeded via splitmix64.

The generator is fixed by contract so that every draw in this package
(support selection, few-shot sampling, shuffles, weight init) reproduces
bit-identically across platforms and Python/numpy versions. numpy's own
generators are deliberately not used on any seeded path.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream with a documented, platform-independent layout.

    The four 64-bit state words are derived from the integer seed with
    consecutive splitmix64 outputs, as recommended by the generator's
    authors. Identical seeds yield identical streams everywhere.
    """

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_gauss_spare")

    def __init__(self, seed: int):
        state = seed & _MASK64
        state, self._s0 = _splitmix64_next(state)
        state, self._s1 = _splitmix64_next(state)
        state, self._s2 = _splitmix64_next(state)
        state, self._s3 = _splitmix64_next(state)
        self._gauss_spare: float | None = None

    def spawn(self, *keys: int) -> "Rng":
        """Child stream keyed by integers; independent of this stream's position.

        Mixing is one splitmix64 step per key, so spawn(a, b) != spawn(b, a)
        and child seeds never collide with the raw parent seed in practice.
        """
        state = self._s0 ^ self._s2
        for k in keys:
            state, out = _splitmix64_next(state ^ (k & _MASK64))
            state = out
        return Rng(state)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError(f"below() requires n >= 1, got {n}")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def normal(self) -> float:
        """Standard normal via Box-Muller; pairs cached for determinism."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        # u1 in (0,1] so log() is finite
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._gauss_spare = r * math.sin(theta)
        return r * math.cos(theta)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n)."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def state_words(self) -> tuple[int, int, int, int]:
        return (self._s0, self._s1, self._s2, self._s3)
