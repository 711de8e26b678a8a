"""Deterministic random number generation for synthetic data.

Everything here is built on SplitMix64 so that generated datasets are
bit-identical across platforms and numpy versions.  numpy's own Generator
is deliberately not used for anything that lands in an output file.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15

_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer: scramble a 64-bit state into an output word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once.  Returns (new_state, output)."""
    state = (state + GAMMA) & MASK64
    return state, mix64(state)


def derive_stream(seed: int, *parts: int) -> int:
    """Fold integer key parts into a seed, yielding an independent stream seed.

    Each part is absorbed with one SplitMix64 round so that nearby keys
    (adjacent frames, adjacent scenarios) give unrelated streams.
    """
    s = seed & MASK64
    for part in parts:
        s = mix64((s + GAMMA + (part & MASK64)) & MASK64)
    return s


class SplitMix64:
    """Sequential SplitMix64 generator with vectorized bulk draws.

    Bulk draws compute outputs for states seed + k*GAMMA directly, so
    `fill_uint64(n)` equals n successive `next_uint64()` calls exactly.
    """

    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    def next_uint64(self) -> int:
        self._state, out = splitmix64_next(self._state)
        return out

    def fill_uint64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        base = np.uint64(self._state)
        steps = (np.arange(1, n + 1, dtype=np.uint64)) * np.uint64(GAMMA)
        with np.errstate(over="ignore"):
            z = base + steps
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * GAMMA) & MASK64
        return z

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 samples in [0, 1): high 53 bits of each output word."""
        words = self.fill_uint64(n)
        return (words >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def signed_units(self, n: int) -> np.ndarray:
        """n float64 samples in [-1, 1): (word / 2**63) - 1."""
        words = self.fill_uint64(n)
        return words.astype(np.float64) * (2.0**-63) - 1.0

    def normals(self, n: int) -> np.ndarray:
        """n float64 standard-normal samples via Box-Muller.

        Draws are consumed in pairs; an odd n still consumes an even
        number of words so stream position stays predictable.
        """
        m = (n + 1) // 2
        u = self.uniforms(2 * m)
        u1 = u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]
