"""Portable deterministic random numbers.

Everything stochastic in this package draws from a counter-based splitmix64
generator (xorshift-multiply family).  A draw is a pure function of
(seed, counter), so streams reproduce bit-for-bit on any platform and any
language that implements the three documented constants:

    z  = (seed + counter * 0x9E3779B97F4A7C15) mod 2^64
    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9   (mod 2^64)
    z ^= z >> 27;  z *= 0x94D049BB133111EB   (mod 2^64)
    z ^= z >> 31

Uniform doubles take the top 53 bits: u = (z >> 11) * 2^-53.

Child streams are derived from a parent seed and a string tag via FNV-1a,
so the per-module seeding used by the CLI ("global seed + module tag") is
itself reproducible.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(seed: int, counter: int) -> int:
    """Return the 64-bit output for one (seed, counter) pair."""
    z = (seed + counter * _GAMMA) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * _MIX1) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * _MIX2) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """Stable 64-bit hash of a UTF-8 string (used for stream tags)."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _mix_array(z: np.ndarray) -> np.ndarray:
    # Vectorised splitmix64 finaliser over uint64 input.
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z &= _MASK64
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z &= _MASK64
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based splitmix64 stream.

    The counter advances by exactly the number of 64-bit words consumed, so
    interleaving scalar and array draws stays reproducible.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.counter = counter

    def fork(self, tag: str) -> "Rng":
        """Derive an independent child stream named by ``tag``."""
        return Rng(splitmix64(self.seed ^ fnv1a64(tag), 0x5EED))

    def fork_index(self, index: int) -> "Rng":
        """Derive an independent child stream from an integer index."""
        return Rng(splitmix64(self.seed, 0xC0FFEE + index))

    # -- raw words ---------------------------------------------------------

    def _words(self, n: int) -> np.ndarray:
        base = np.uint64(self.seed)
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = (base + idx * np.uint64(_GAMMA)) & _MASK64
            return _mix_array(z)

    def u64(self) -> int:
        value = splitmix64(self.seed, self.counter)
        self.counter += 1
        return value

    # -- distributions -----------------------------------------------------

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size: int | None = None):
        """Uniform float64 in [lo, hi); scalar when size is None."""
        if size is None:
            u = (self.u64() >> 11) * 2.0**-53
            return lo + (hi - lo) * u
        words = self._words(size)
        u = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def normal(self, size: int | None = None, mean: float = 0.0, std: float = 1.0):
        """Gaussian via Box-Muller; consumes two words per value."""
        n = 1 if size is None else size
        words = self._words(2 * n)
        u1 = ((words[:n] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (words[n:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        values = mean + std * r * np.cos(2.0 * math.pi * u2)
        if size is None:
            return float(values[0])
        return values

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi). Modulo reduction; bias is irrelevant here."""
        if hi <= lo:
            raise ValueError("empty range")
        return lo + self.u64() % (hi - lo)

    def choice(self, seq: Sequence):
        return seq[self.randint(0, len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        order = list(range(n))
        self.shuffle(order)
        return np.array(order, dtype=np.int64)
