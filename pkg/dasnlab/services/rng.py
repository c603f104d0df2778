"""
Seeded 64-bit pseudo-random streams: splitmix64 seeding and xoshiro256**.

Every random draw in the laboratory flows through these generators so that
a run is fully determined by its seed, independent of platform and of the
numpy version installed.
"""

import math
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

MASK64 = (1 << 64) - 1

Key = Union[int, str]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int) -> Tuple[int, int]:
    """
    Advance a splitmix64 state.

    Args:
        state: Current 64-bit state.

    Returns:
        Tuple of (next state, 64-bit output).
    """
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(*keys: Key) -> int:
    """
    Fold a sequence of integer or string keys into one 64-bit seed.

    Strings are folded byte by byte, so ("domain", 3) and ("domain", 4)
    yield unrelated seeds.
    """
    state = 0
    for key in keys:
        if isinstance(key, str):
            words: Iterable[int] = key.encode("utf-8") + b"\xff"
        else:
            words = (int(key) & MASK64,)
        for word in words:
            state, out = splitmix64(state ^ word)
            state = out
    return state


class Xoshiro256StarStar:
    """
    xoshiro256** generator seeded through splitmix64.
    """

    def __init__(self, seed: int = 0):
        state = seed & MASK64
        words = []
        for _ in range(4):
            state, out = splitmix64(state)
            words.append(out)
        self._s = words

    @classmethod
    def from_keys(cls, *keys: Key) -> "Xoshiro256StarStar":
        """Create a stream whose seed is derived from the given keys."""
        return cls(derive_seed(*keys))

    @classmethod
    def from_state(cls, state: Sequence[int]) -> "Xoshiro256StarStar":
        """Rebuild a generator from the four state words returned by `state`."""
        if len(state) != 4 or not any(state):
            raise ValueError("xoshiro256** state must be four words, not all zero")
        rng = cls.__new__(cls)
        rng._s = [int(w) & MASK64 for w in state]
        return rng

    @property
    def state(self) -> List[int]:
        return list(self._s)

    def next_u64(self) -> int:
        """Next raw 64-bit output."""
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def integers(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def uniform(self, low: float, high: float, size: int) -> np.ndarray:
        return np.array(
            [low + (high - low) * self.random() for _ in range(size)], dtype=np.float64
        )

    def normal(self, size: int) -> np.ndarray:
        """Standard normal draws via the Box-Muller transform."""
        out = np.empty(size, dtype=np.float64)
        i = 0
        while i < size:
            u1 = 1.0 - self.random()  # (0, 1]
            u2 = self.random()
            radius = math.sqrt(-2.0 * math.log(u1))
            out[i] = radius * math.cos(2.0 * math.pi * u2)
            if i + 1 < size:
                out[i + 1] = radius * math.sin(2.0 * math.pi * u2)
            i += 2
        return out

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)
