"""Seeded random streams with hierarchical, order-independent children."""
from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import default_dtype


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    digest = hashlib.blake2b(str(key).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """PCG64 stream identified by ``seed`` plus a path of child keys.

    ``Rng(7).child("init", "enc_a.conv0")`` always yields the same stream,
    independent of how many draws were made from the parent.
    """

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_key_int(k) for k in self.path))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys) -> "Rng":
        return Rng(self.seed, self.path + keys)

    def normal(self, shape, std: float = 1.0, mean: float = 0.0) -> np.ndarray:
        return (self.generator.standard_normal(shape) * std + mean).astype(default_dtype())

    def uniform(self, low=0.0, high=1.0, shape=None):
        out = self.generator.uniform(low, high, shape)
        return out if shape is None else out.astype(default_dtype())

    def integers(self, low, high=None, shape=None):
        return self.generator.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def random(self) -> float:
        return float(self.generator.random())

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"
