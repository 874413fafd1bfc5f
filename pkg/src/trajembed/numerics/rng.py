"""Counter-based splitmix64 generator.

Draw ``i`` of a stream is ``mix(seed + (counter + i) * GOLDEN)``, so any stream
can be split into independent children by hashing a key into a new seed, and
the output is identical on every platform with 64-bit unsigned arithmetic.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SeededRng:
    """Deterministic, splittable random stream."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, counter={self.counter})"

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words."""
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * _GOLDEN)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = int(np.prod(size)) if size is not None else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        n = int(np.prod(size)) if size is not None else 1
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)  # (0, 1]
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low: int, high: int | None = None, size=None):
        """Uniform integers in ``[low, high)``."""
        if high is None:
            low, high = 0, low
        span = high - low
        if span <= 0:
            raise ValueError(f"empty integer range [{low}, {high})")
        n = int(np.prod(size)) if size is not None else 1
        out = low + np.floor(self.uniform(n) * span).astype(np.int64)
        out = np.minimum(out, high - 1)
        return int(out[0]) if size is None else out.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")

    def choice(self, n: int, p=None) -> int:
        if p is None:
            return self.integers(0, n)
        cdf = np.cumsum(np.asarray(p, dtype=np.float64))
        return int(min(np.searchsorted(cdf, self.uniform() * cdf[-1], side="right"), n - 1))

    def split(self, key) -> "SeededRng":
        """Child stream keyed by ``key``; independent of how many draws the parent made."""
        digest = hashlib.sha256(f"{self.seed}:{key}".encode()).digest()
        return SeededRng(int.from_bytes(digest[:8], "little"))
