"""Deterministic 64-bit integer-state random generator.

All randomness in the toolkit flows from a single top-level seed through
SplitMix64, a counter-style mixer with pure integer state.  Identical seeds
therefore reproduce identical datasets, consensus fits and splits on every
platform, independent of numpy or libc RNG implementations.

Seed derivation rule (used everywhere a sub-stream is needed):

    derive_seed(seed, part, part, ...)

mixes each part (stage name, image index, pair id, ...) into the parent seed
with FNV-1a over the part's string form followed by one SplitMix64 round.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: int) -> int:
    """One SplitMix64 output round."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = (h ^ byte) * _FNV_PRIME & _MASK64
    return h


def derive_seed(seed: int, *parts) -> int:
    """Derive a sub-stream seed from (seed, part, part, ...)."""
    s = seed & _MASK64
    for part in parts:
        s = _mix(s ^ _fnv1a(str(part)))
    return s


class SplitMix64:
    """Sequential SplitMix64 generator with convenience distributions.

    Higher-level draws (normal, poisson, beta) consume only uniform variates
    from the integer stream, keeping the stream layout explicit.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        return _mix(self._state)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """Uniform in [low, high) with 53-bit resolution."""
        u = (self.next_u64() >> 11) * 2.0**-53
        return low + (high - low) * u

    def _uniform_open(self) -> float:
        """Uniform in (0, 1], safe for log()."""
        return ((self.next_u64() >> 11) + 1) * 2.0**-53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), bias rejected."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order as drawn."""
        if k > n:
            raise ValueError("k exceeds population")
        picked: list[int] = []
        seen = set()
        while len(picked) < k:
            i = self.randint(n)
            if i not in seen:
                seen.add(i)
                picked.append(i)
        return picked

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Box-Muller; consumes two uniforms per value."""
        u1 = self._uniform_open()
        u2 = self.uniform()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mu + sigma * z

    def poisson(self, lam: float) -> int:
        """Knuth product method; adequate for the small rates used here."""
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        if lam == 0:
            return 0
        limit = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= self._uniform_open()
            if p <= limit:
                return k
            k += 1

    def gamma(self, shape: float) -> float:
        """Marsaglia-Tsang for shape >= 1, boosted below 1."""
        if shape <= 0:
            raise ValueError("shape must be positive")
        if shape < 1.0:
            # Gamma(a) = Gamma(a+1) * U^(1/a)
            return self.gamma(shape + 1.0) * self._uniform_open() ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = (1.0 + c * x) ** 3
            if v <= 0:
                continue
            u = self._uniform_open()
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return d * v

    def beta(self, a: float, b: float) -> float:
        ga = self.gamma(a)
        gb = self.gamma(b)
        return ga / (ga + gb)
