"""Seeded, platform-portable pseudo-random number generation.

The generator is a counter-based SplitMix64: output k of a stream with seed
``s`` is ``mix64(s + (k+1) * GOLDEN)`` where ``mix64`` is the finalizer from
Steele et al.'s SplitMix. Everything is 64-bit modular integer arithmetic plus
IEEE-754 double conversion, so a given seed produces the same stream on every
platform and numpy version. Floats in [0, 1) take the top 53 bits of each
output word.

One ``Rng`` instance owns one stream; independent streams for sub-tasks are
obtained through :func:`derive_seed`, never by sharing an instance.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)

_U64 = np.uint64
_TWO53 = float(2**53)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def derive_seed(master: int, *parts: object) -> int:
    """Stable 64-bit sub-seed from a master seed and a label path.

    Hashes the decimal master seed and the ``str()`` of each part with
    BLAKE2b; used to give every (sweep value, fold) run its own independent
    stream while staying reproducible from one CLI-level seed.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Single-owner SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def next_uint64(self, n: int) -> np.ndarray:
        """The next ``n`` raw 64-bit words of the stream."""
        if n < 0:
            raise ValueError("n must be >= 0")
        ks = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64(_U64(self.seed) + ks * _GOLDEN)

    def random(self, n: int) -> np.ndarray:
        """``n`` float64 samples uniform in [0, 1)."""
        bits = self.next_uint64(n) >> _U64(11)
        return bits.astype(np.float64) / _TWO53

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Box-Muller normals; consumes ``2 * ceil(n/2)`` stream words."""
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1], keeps log finite
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return mean + std * out[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n); one uniform per swap."""
        idx = np.arange(n)
        if n < 2:
            return idx
        us = self.random(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(us[n - 1 - i] * (i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def shuffle(self, values: list) -> list:
        """Fisher-Yates shuffled copy of a list."""
        out = list(values)
        if len(out) < 2:
            return out
        us = self.random(len(out) - 1)
        for i in range(len(out) - 1, 0, -1):
            j = int(us[len(out) - 1 - i] * (i + 1))
            out[i], out[j] = out[j], out[i]
        return out
