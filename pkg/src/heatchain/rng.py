"""Reproducible random streams for trajectory ensembles.

A stream for ``(seed, index)`` is ``PCG64(SeedSequence(seed, spawn_key=(index,)))``.
numpy documents both the SeedSequence hashing and the PCG64 output
sequence as stable across platforms and releases, which makes ensembles
bit-reproducible.  The engine hands the underlying ``Generator`` straight to
its compiled loop, so Python-side and compiled draws advance one shared state.
"""
from __future__ import annotations

import math

import numpy as np


class RngStream:
    """Deterministic stream with the two draws the model needs."""

    __slots__ = ("generator", "seed", "index")

    def __init__(self, generator: np.random.Generator, seed=None, index=None):
        self.generator = generator
        self.seed = seed
        self.index = index

    def uniform(self) -> float:
        """Uniform on the open interval (0, 1); exact zeros are redrawn."""
        while True:
            u = self.generator.random()
            if u > 0.0:
                return u

    def exponential(self, mean: float) -> float:
        # inverse CDF keeps the draw count fixed at one uniform
        return -mean * math.log(self.uniform())

    def __repr__(self):
        return f"RngStream(seed={self.seed}, index={self.index})"


def derive_stream(seed: int, index: int = 0) -> RngStream:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative integers")
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return RngStream(np.random.Generator(np.random.PCG64(seq)), seed, index)
