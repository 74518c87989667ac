"""Reproducible random sampling.

Every training trial owns exactly one stream; replaying the same seed and
call sequence reproduces every sample bit for bit (PCG64 is counter-based
and platform-stable).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class RngStream:
    """A seeded PCG64 generator with a few typed convenience draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def state(self):
        return self._gen.bit_generator.state

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray | int:
        out = self._gen.integers(low, high, size=shape)
        return out

    def poisson(self, mean, shape=None) -> np.ndarray:
        return self._gen.poisson(mean, size=shape)

    def derangement_shift(self, n: int) -> int:
        """A uniform nonzero cyclic offset; rolling by it has no fixed point."""
        if n < 2:
            raise ValueError("need at least two rows to build product samples")
        return int(self._gen.integers(1, n))

    def child(self, offset: int) -> "RngStream":
        """An independent stream with a deterministic derived seed."""
        return RngStream((self.seed * 1000003 + offset) % (2**63))


def sample_poisson(rng: RngStream, mean: float, n: int) -> Tensor:
    """n i.i.d. Poisson(mean) draws as an integer-valued tensor.

    Uses the generator's exact sampler (inversion at small means, transformed
    rejection at large ones), so means up to the hundreds stay exact.
    """
    if mean < 0:
        raise ValueError(f"Poisson mean must be nonnegative, got {mean}")
    draws = rng.poisson(mean, (int(n),)).astype(np.float64)
    return Tensor(draws)
