"""Evaluation metrics: image quality (L1/MSE/PSNR/SSIM), Gaussian-statistics
Frechet distance, inception-style score over probability rows, and the 1d
discrete earth-mover distance.

Feature statistics are supplied externally (the feature extractor is out of
scope); see :mod:`microsim.io` for the flat binary and CSV formats they are
read from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DomainError, ShapeError


def image_metrics(pred, target) -> dict:
    """L1, MSE, PSNR, and global-statistics SSIM of an image pair.

    PSNR = 10 log10(max(pred)^2 / MSE), taking the peak over the prediction.
    SSIM uses the single global-statistics form (no sliding window, no
    stabilizing constants) and expects inputs already normalized to [0, 1];
    identical images report psnr = +inf and ssim = 1 exactly.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"image shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ShapeError("empty images")
    diff = p - t
    l1 = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return {"l1": l1, "mse": mse, "psnr": float("inf"), "ssim": 1.0}
    peak = float(np.max(p))
    with np.errstate(divide="ignore"):
        psnr = float(10.0 * np.log10(peak * peak / mse)) if peak != 0.0 else float("-inf")
    mu_p, mu_t = float(p.mean()), float(t.mean())
    var_p, var_t = float(p.var()), float(t.var())
    cov = float(np.mean((p - mu_p) * (t - mu_t)))
    denom = (mu_p * mu_p + mu_t * mu_t) * (var_p + var_t)
    ssim = 4.0 * mu_p * mu_t * cov / max(denom, 1e-12)
    return {"l1": l1, "mse": mse, "psnr": psnr, "ssim": float(ssim)}


@dataclass
class FeatureStats:
    """Mean vector and covariance matrix of a feature distribution."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.size
        if self.sigma.shape != (d, d):
            raise ShapeError(f"sigma must be [{d},{d}], got {self.sigma.shape}")
        if np.max(np.abs(self.sigma - self.sigma.T)) > 1e-10:
            raise DomainError("covariance must be symmetric within 1e-10")
        if np.min(np.linalg.eigvalsh((self.sigma + self.sigma.T) / 2)) < -1e-8:
            raise DomainError("covariance is indefinite beyond tolerance")

    @classmethod
    def from_features(cls, rows: np.ndarray) -> "FeatureStats":
        rows = np.asarray(rows, dtype=np.float64)
        mu = rows.mean(axis=0)
        sigma = np.cov(rows, rowvar=False, bias=False)
        return cls(mu=mu, sigma=np.atleast_2d(sigma))


def _psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2)
    if np.min(vals) < -1e-8:
        raise DomainError("covariance is indefinite beyond tolerance")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(real: FeatureStats, fake: FeatureStats) -> float:
    """||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^(1/2)).

    The cross term is evaluated through the symmetric conjugation
    Tr((S_r^(1/2) S_f S_r^(1/2))^(1/2)), which is trace-equivalent for PSD
    inputs and numerically stable under eigendecomposition.
    """
    if real.mu.size != fake.mu.size:
        raise ShapeError(f"dimension mismatch: {real.mu.size} vs {fake.mu.size}")
    half = _psd_sqrt(real.sigma)
    inner = half @ fake.sigma @ half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    if np.min(vals) < -1e-6:
        raise DomainError("cross covariance product is indefinite beyond tolerance")
    tr_sqrt = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    dmu = real.mu - fake.mu
    fid = float(dmu @ dmu + np.trace(real.sigma) + np.trace(fake.sigma) - 2.0 * tr_sqrt)
    return max(fid, 0.0)


def inception_style_score(prob_rows) -> float:
    """exp of the mean KL divergence of each probability row to the row mean.

    Rows must be nonnegative and sum to 1 within 1e-9.  The score lies in
    [1, K] for K classes.
    """
    rows = np.asarray(prob_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ShapeError(f"expected [n, K] probability rows, got {rows.shape}")
    if np.any(rows < 0):
        raise DomainError("probability rows must be nonnegative")
    sums = rows.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > 1e-9)[0]
    if bad.size:
        raise DomainError(f"row {bad[0]} sums to {sums[bad[0]]}, not 1")
    marginal = rows.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rows > 0, rows * (np.log(rows) - np.log(marginal)), 0.0)
    kl = terms.sum(axis=1)
    return float(np.exp(kl.mean()))


def discrete_emd(p, q) -> float:
    """1d earth-mover distance with unit ground distance between bins.

    Inputs are nonnegative vectors of equal total mass (unnormalized
    allowed); the distance is the sum of absolute prefix sums of p - q.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"vectors must be 1d and equal length: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise DomainError("mass must be nonnegative")
    if abs(p.sum() - q.sum()) > 1e-9 * max(p.sum(), q.sum(), 1.0):
        raise DomainError(f"total mass mismatch: {p.sum()} vs {q.sum()}")
    return float(np.sum(np.abs(np.cumsum(p - q))))
