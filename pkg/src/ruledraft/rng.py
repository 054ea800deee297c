"""Deterministic random streams with labeled substreams.

Every stochastic component (dropout masks, world sampling, annotator noise,
random policies) draws from an RngStream. Identical seed and substream path
always reproduce the identical draw sequence, which is what makes training
traces and MC-dropout estimates bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Counter-tracked random stream keyed by (seed, substream path)."""

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self.counter = 0
        self._gen: np.random.Generator | None = None

    def _generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.PCG64(seq))
        return self._gen

    def substream(self, *labels) -> "RngStream":
        """Independent stream addressed by hashable labels; pure w.r.t. self."""
        return RngStream(self.seed, self.path + tuple(_label_to_int(l) for l in labels))

    def random(self, size=None):
        self.counter += 1
        return self._generator().random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.counter += 1
        return self._generator().normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        self.counter += 1
        return self._generator().integers(low, high, size)

    def permutation(self, x):
        self.counter += 1
        return self._generator().permutation(x)

    def choice(self, a, size=None, replace=True):
        self.counter += 1
        return self._generator().choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path}, counter={self.counter})"
