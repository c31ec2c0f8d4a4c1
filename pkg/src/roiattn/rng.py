"""Portable counter-based SplitMix64 generator.

Every stream is a 64-bit key; the t-th output of a stream is
``mix64(key + (t + 1) * GOLDEN)``, which is exactly the SplitMix64 sequence
started from state ``key``. Because output t depends only on (key, t), blocks
of draws can be produced with vectorized uint64 arithmetic and the results are
identical to a scalar implementation in any language.

Derived quantities:

* ``uniform``: ``(u >> 11) * 2**-53``, in [0, 1).
* ``normal``: Box-Muller on two consecutive uniforms ``u1, u2``,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (the sine branch is discarded).
* child streams: ``key' = mix64(key ^ mix64(tag + GOLDEN))`` where tag is an
  integer, or the FNV-1a 64 hash of a string tag.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = 0xFFFFFFFFFFFFFFFF

_G = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _tag_value(tag: int | str) -> int:
    if isinstance(tag, str):
        h = 0xCBF29CE484222325
        for byte in tag.encode("utf-8"):
            h = ((h ^ byte) * 0x100000001B3) & MASK64
        return h
    return int(tag) & MASK64


class SplitMix64:
    """A single stream. Not thread-safe; spawn one stream per worker."""

    def __init__(self, seed: int, counter: int = 0):
        self.key = int(seed) & MASK64
        self.counter = counter

    def child(self, *tags: int | str) -> "SplitMix64":
        key = self.key
        for tag in tags:
            key = mix64(key ^ mix64((_tag_value(tag) + GOLDEN) & MASK64))
        return SplitMix64(key)

    def uint64(self, size: int) -> np.ndarray:
        t = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + t * _G
        return _mix64_array(z)

    def uniform(self, size: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.uint64(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, size: int) -> np.ndarray:
        u = self.uniform(2 * size).reshape(size, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])

    def below(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift on 32 high bits."""
        u = int(self.uint64(1)[0]) >> 32
        return (u * n) >> 32

    def shuffle(self, items: np.ndarray) -> np.ndarray:
        """Fisher-Yates shuffle; returns a permuted copy.

        Step i (from len-1 down to 1) consumes one draw and swaps with
        ``j = ((u >> 32) * (i + 1)) >> 32``.
        """
        out = np.array(items, copy=True)
        n = len(out)
        if n < 2:
            return out
        draws = (self.uint64(n - 1) >> np.uint64(32)).tolist()
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = (draws[step] * (i + 1)) >> 32
            out[i], out[j] = out[j], out[i]
        return out
