"""Deterministic random numbers via SplitMix64.

The generator is fixed to SplitMix64 so that identical seeds produce identical
streams on every platform and numpy version.  The state advances by a constant
per draw, which lets bulk draws be computed vectorized while staying on the
exact same stream as scalar draws.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    """FNV-1a hash of the UTF-8 bytes of *text* (Python's hash() is salted)."""
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 stream. All pipeline randomness flows through instances of this."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return _mix(self._state)

    def u64_array(self, n: int) -> np.ndarray:
        """n draws, bit-identical to n successive next_u64() calls."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + steps * np.uint64(_GOLDEN)
        self._state = (self._state + n * _GOLDEN) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def uniform01(self, n: int) -> np.ndarray:
        """n float64 values in [0, 1), using the top 53 bits of each draw."""
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        return self.uniform01(n) * (hi - lo) + lo

    def below(self, n: int) -> int:
        """Integer in [0, n). Modulo reduction; bias is irrelevant at our scales."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, tag: str) -> "Rng":
        """Independent child stream derived from this stream's seed and *tag*."""
        return Rng(self.seed ^ fnv1a64(tag))
