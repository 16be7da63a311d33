"""Seeded random streams with a reproducibility contract.

RngStream wraps a counter-based 64-bit Philox generator: the same seed
yields the same uniform sequence on every platform, so whole experiment
runs replay bit-identically.  Gaussians come from Box-Muller over the
uniform stream (not a library normal sampler) to keep the draw order part
of the documented contract.  Per-trial streams come from seed XOR trial
index, which keeps parallel trials independent of scheduling.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["RngStream"]

_MASK64 = (1 << 64) - 1


class RngStream:
    """Deterministic uniform/Gaussian stream for one logical task."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def spawn(self, index: int) -> "RngStream":
        """Independent stream for sub-task `index` (seed XOR index)."""
        return RngStream(self.seed ^ (int(index) & _MASK64))

    def uniform(self, size: int | None = None):
        """Uniform float64 in [0, 1); scalar when size is None."""
        if size is None:
            return float(self._gen.random())
        return self._gen.random(size)

    def normal(self, size: int | None = None):
        """Standard Gaussians via Box-Muller on uniform pairs.

        Consumes exactly 2*ceil(k/2) uniforms for k values, in a fixed
        order, so downstream draws stay aligned across platforms.
        """
        k = 1 if size is None else int(size)
        if k < 0:
            raise ValueError("negative sample count")
        if k == 0:
            return np.empty(0)
        pairs = (k + 1) // 2
        u = self._gen.random(2 * pairs)
        u1 = 1.0 - u[0::2]          # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * math.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(ang)
        z[1::2] = r * np.sin(ang)
        if size is None:
            return float(z[0])
        return z[:k]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        """Gaussian (rows, cols) matrix, row-major draw order."""
        return self.normal(rows * cols).reshape(rows, cols)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n)."""
        return self._gen.permutation(n)

    def integer_below(self, n: int) -> int:
        """Uniform integer in [0, n) from one uniform draw."""
        if n <= 0:
            raise ValueError("need a positive range")
        v = int(self.uniform() * n)
        return n - 1 if v >= n else v
