"""Deterministic counter-based random streams.

Every draw is a pure function of (seed, counter): raw word k is the
splitmix64 finalizer applied to ``seed + (k + 1) * GOLDEN`` (all arithmetic
mod 2**64), so a given seed reproduces the same stream on any platform.
Gaussians come from the Box-Muller transform applied to consecutive
uniform pairs drawn from the same counter sequence.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_MASK_64 = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 2.0 ** -53


def _mix64(words: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wraps mod 2**64)."""
    z = words
    z = (z ^ (z >> np.uint64(30))) * _MIX_1
    z = (z ^ (z >> np.uint64(27))) * _MIX_2
    return z ^ (z >> np.uint64(31))


def _fnv1a64(text: str) -> int:
    """FNV-1a hash of a label, used to derive child stream seeds."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK_64
    return h


class Rng:
    """Counter-based PRNG with uniform and Box-Muller Gaussian output."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK_64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64(np.uint64(self.seed) + idx * _GOLDEN)

    def uniforms(self, n: int) -> np.ndarray:
        """n uniform draws in (0, 1], as multiples of 2**-53."""
        return ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53

    def standard_normal(self, shape: int | tuple = ()) -> np.ndarray | float:
        """Standard normal draws via Box-Muller.

        Pairs are filled as [r*cos, r*sin, r*cos, r*sin, ...]; an odd request
        consumes a full final pair and discards its second half.
        """
        if isinstance(shape, int):
            shape = (shape,)
        n = int(np.prod(shape, dtype=int)) if shape else 1
        if n == 0:
            return np.empty(shape)
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(u[:pairs]))
        angle = (2.0 * np.pi) * u[pairs:]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        if not shape:
            return float(z[0])
        return z[:n].reshape(shape)

    def spawn(self, key: str) -> "Rng":
        """Independent child stream derived from this seed and a label."""
        child = _mix64(np.array([self.seed ^ _fnv1a64(key)], dtype=np.uint64))
        return Rng(int(child[0]))
