"""Seeded random streams.

Backed by numpy's PCG64 bit generator seeded through ``SeedSequence``.
Child streams are addressed by integer keys or component names, so a
caller can hand every sample, epoch or component its own stream without
shifting anybody else's draws.
"""
import zlib

import numpy as np


def name_key(name):
    """Stable 32-bit key for a component name (crc32 of its UTF-8 bytes)."""
    return zlib.crc32(name.encode("utf-8"))


def derive_seed(seed, *path):
    """64-bit seed for the child addressed by ``path`` (ints or names) under ``seed``."""
    key = tuple(name_key(p) if isinstance(p, str) else int(p) for p in path)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class SeededRng:
    def __init__(self, seed, _key=()):
        self.seed = int(seed)
        self._key = tuple(_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._key))
        )

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, key={self._key})"

    def child(self, *path):
        key = tuple(name_key(p) if isinstance(p, str) else int(p) for p in path)
        return SeededRng(self.seed, self._key + key)

    def uniform(self, lo, hi, shape):
        return self._gen.uniform(lo, hi, size=shape)

    def normal(self, shape, scale=1.0):
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, lo, hi, size=None):
        return self._gen.integers(lo, hi, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def uniform_rows(self, ids, width, lo, hi):
        """One row of uniform draws per id, each from the id's own child stream.

        Row ``k`` depends only on ``ids[k]``, so splitting a batch (or
        processing it in another order) reproduces the same rows.
        """
        out = np.empty((len(ids), width))
        for k, i in enumerate(ids):
            out[k] = self.child(int(i)).uniform(lo, hi, width)
        return out
