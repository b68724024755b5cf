"""Ring-of-Gaussians 2d dataset and the mode-coverage diagnostic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Rng


@dataclass
class RingDatasetConfig:
    """Mixture of ``n_modes`` isotropic Gaussians equally spaced on a circle."""

    n_modes: int = 8
    radius: float = 1.0
    std: float = 0.05
    samples_per_draw: int = 64

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if self.std <= 0:
            raise ValueError("std must be positive")

    def centers(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.n_modes) / self.n_modes
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


class RingSampler:
    """Draws (x, y) points: uniform mode choice plus per-coordinate noise."""

    def __init__(self, cfg: RingDatasetConfig, rng: Rng):
        self.cfg = cfg
        self.rng = rng
        self._centers = cfg.centers()

    def draw(self, n: int | None = None) -> np.ndarray:
        n = self.cfg.samples_per_draw if n is None else int(n)
        modes = self.rng.integers(0, self.cfg.n_modes, size=n)
        noise = self.rng.standard_normal((n, 2)) * self.cfg.std
        return self._centers[modes] + noise


def make_ring_dataset(cfg: RingDatasetConfig, rng: Rng) -> RingSampler:
    return RingSampler(cfg, rng)


def mode_coverage(
    samples: np.ndarray,
    cfg: RingDatasetConfig,
    capture_radius_sigmas: float = 3.0,
    min_fraction: float = 0.02,
) -> int:
    """Number of mixture modes receiving a meaningful share of the samples.

    A mode counts as covered when at least ``min_fraction`` of the samples
    fall within ``capture_radius_sigmas * std`` of its center.
    """
    pts = np.asarray(samples, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ValueError(f"samples must be a non-empty [n, 2] array, got {pts.shape}")
    centers = cfg.centers()
    radius = capture_radius_sigmas * cfg.std
    dists = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
    hits = dists <= radius
    fractions = hits.mean(axis=0)
    return int(np.sum(fractions >= min_fraction))
