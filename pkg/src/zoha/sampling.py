"""Counter-keyed Gaussian streams.

A stream is identified by ``(seed, key)``; ``key`` is a tuple of
non-negative integers such as ``(purpose, iteration)``. Draws depend only
on the identity and the position in the stream, never on which thread
asked first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplerState:
    seed: int
    key: tuple = ()
    position: int = 0  # standard-normal scalars consumed so far


class GaussianSampler:
    def __init__(self, seed: int, key: tuple = (), position: int = 0):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.key))
        self.position = 0
        if position:
            self._rng.standard_normal(int(position))
            self.position = int(position)

    @classmethod
    def from_state(cls, state: SamplerState) -> "GaussianSampler":
        return cls(state.seed, state.key, state.position)

    @property
    def state(self) -> SamplerState:
        return SamplerState(self.seed, self.key, self.position)

    def draw(self, n: int, d: int) -> np.ndarray:
        out = self._rng.standard_normal((int(n), int(d)))
        self.position += out.size
        return out

    def __repr__(self):
        return f"GaussianSampler(seed={self.seed}, key={self.key}, position={self.position})"


# stream purposes used by the optimizer
GRADIENT = 1
HESSIAN = 2
POWER_START = 3
