"""Seeded, stream-derivable pseudo-random numbers.

One generator algorithm (SplitMix64) is used project-wide so every random
draw is reproducible from an experiment's explicit seeds.  Independent
streams are derived from (master seed, purpose label, stream index), which
lets scene generation, weight init, noise and attack starts consume
randomness without interfering with each other.

Normal deviates come from the Box-Muller transform applied to the uniform
output, so the same seed yields the same noise field on every platform.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z + _GOLDEN) & _MASK
        z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _MASK
        z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _MASK
        return z ^ (z >> np.uint64(31))


def derive_seed(master: int, purpose: str, index: int = 0) -> int:
    """Derive an independent stream seed from (master, purpose, index).

    The purpose string is folded into the state byte by byte so distinct
    labels give unrelated streams even for adjacent master seeds.
    """
    state = np.uint64(master & 0xFFFFFFFFFFFFFFFF)
    state = _mix64(state)
    for b in purpose.encode("utf-8"):
        state = _mix64(state ^ np.uint64(b))
    state = _mix64(state ^ np.uint64(index & 0xFFFFFFFFFFFFFFFF))
    return int(state)


class Stream:
    """Counter-based SplitMix64 stream producing f32 arrays."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        return _mix64(self.seed ^ _mix64(idx))

    def uniform01(self, n: int) -> np.ndarray:
        """n doubles uniform in [0, 1)."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, n: int, low: float, high: float) -> np.ndarray:
        """n f32 values uniform in [low, high)."""
        return (low + (high - low) * self.uniform01(n)).astype(np.float32)

    def normal(self, n: int) -> np.ndarray:
        """n f32 standard-normal values via Box-Muller.

        Draws pairs (u1, u2); u1 is shifted away from zero so log(u1) is
        finite.
        """
        m = (n + 1) // 2
        u1 = self.uniform01(m)
        u2 = self.uniform01(m)
        u1 = 1.0 - u1  # (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.astype(np.float32)

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """n ints uniform in [low, high] (inclusive), via rejection-free modulo.

        The tiny modulo bias is irrelevant for layout sampling; ranges here
        are far below 2**32.
        """
        span = np.uint64(high - low + 1)
        return (low + (self._raw(n) % span).astype(np.int64)).astype(np.int64)

    def shuffled_indices(self, n: int) -> np.ndarray:
        """A deterministic permutation of range(n) (Fisher-Yates)."""
        idx = np.arange(n, dtype=np.int64)
        if n < 2:
            return idx
        draws = self._raw(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] % np.uint64(i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx


def stream(master: int, purpose: str, index: int = 0) -> Stream:
    """Stream seeded from a derived (master, purpose, index) seed."""
    return Stream(derive_seed(master, purpose, index))
