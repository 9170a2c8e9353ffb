"""Deterministic random number generation.

The generator is a counter-based SplitMix64 stream: output ``i`` of a seed
``s`` is a fixed bit-mixing function of ``s`` and ``i``, so the sequence is
identical across runs, platforms, and numpy versions, and any position can
be reproduced without replaying the stream.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """Finalizer of SplitMix64 applied elementwise to uint64 input."""
    with np.errstate(over="ignore"):
        z = (x + _GOLDEN) & _U64_MASK
        z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _U64_MASK
        z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _U64_MASK
        return z ^ (z >> np.uint64(31))


class Rng:
    """Seeded stream of uniform/normal draws and permutations.

    The state is (seed, counter); ``child`` derives an independent stream by
    hashing the parent seed with a key, which lets per-sample workers draw
    without sharing mutable state.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def child(self, *keys: int) -> "Rng":
        """Derive an independent stream from this seed and integer keys."""
        s = np.uint64(self.seed)
        for k in keys:
            s = _splitmix64(np.uint64((int(s) ^ (int(k) & 0xFFFFFFFFFFFFFFFF))))
        return Rng(int(s))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _splitmix64(np.uint64(self.seed) ^ ((idx * _GOLDEN) & _U64_MASK))

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform floats in [low, high) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = (low + u * (high - low)).astype(np.float32)
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller on the uniform stream."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u = (self._raw(2 * m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u1 = 1.0 - u[:m]  # in (0, 1], keeps log finite
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = z.astype(np.float32)
        return out.reshape(shape) if shape else out[0]

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """n integers in [low, high) via multiply-shift on the raw stream."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        span = np.uint64(high - low)
        vals = (self._raw(n) % span).astype(np.int64) + low
        return vals

    def randint(self, low: int, high: int) -> int:
        return int(self.integers(1, low, high)[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n), driven by the raw stream."""
        perm = np.arange(n)
        if n <= 1:
            return perm
        draws = self._raw(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
