"""Deterministic randomness backed by the counter-based Philox generator.

Philox is a counter-based bit generator: the stream for a given 64-bit seed
is identical across runs, platforms, and processes, which is what the
reproducibility contracts of the experiments rely on.  All randomness in the
package flows through :class:`Rng`; nothing reads global RNG state.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class Rng:
    """Seeded random source; one instance per experiment or worker."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=np.uint64(self.seed)))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def uniform01(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def spawn(self, stream: int) -> "Rng":
        """Independent substream; deterministic in (seed, stream index)."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(
            np.random.Philox(key=np.uint64(self.seed)).jumped(int(stream) + 1)
        )
        return child


def sample(rng: Rng, distribution: str, shape) -> Tensor:
    """Draw a tensor from ``standard_normal`` or ``uniform01``."""
    shape = tuple(int(s) for s in (shape if np.iterable(shape) else (shape,)))
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ShapeError(f"sample needs a non-empty positive shape, got {shape}")
    if distribution == "standard_normal":
        return Tensor(rng.standard_normal(shape))
    if distribution == "uniform01":
        return Tensor(rng.uniform01(shape))
    raise ValueError(f"unknown distribution {distribution!r}")
