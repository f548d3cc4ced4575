"""Seeded random streams.

Every draw goes through numpy's Philox4x32-10 bit generator, a counter-based
generator with a published algorithm, so a (seed, key path) pair maps to the
same stream on any platform.  Child streams are derived by hashing the parent
seed together with a string key (BLAKE2b, 8-byte digest).
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """64-bit seed for the sub-stream named by ``keys`` under ``seed``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed) & 0xFFFFFFFFFFFFFFFF).encode())
    for k in keys:
        h.update(b"/")
        h.update(str(k).encode())
    return int.from_bytes(h.digest(), "little")


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def child(self, *keys) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def truncated_normal(self, shape, std: float, bound: float = 2.0) -> np.ndarray:
        """Normal(0, std) draws resampled until within +-bound*std."""
        out = self._gen.normal(0.0, std, shape)
        bad = np.abs(out) > bound * std
        while bad.any():
            out[bad] = self._gen.normal(0.0, std, int(bad.sum()))
            bad = np.abs(out) > bound * std
        return out
