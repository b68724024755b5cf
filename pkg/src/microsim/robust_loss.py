"""General adaptive robust loss: one shape parameter spans L2, Charbonnier,
Cauchy, Geman-McClure, and Welsch behaviour.

The core is

    rho(x, alpha, c) = |alpha - 2| / alpha * (((x/c)^2 / |alpha - 2| + 1)^(alpha/2) - 1)

with removable singularities handled by closed-form branches:

    alpha = 2      ->  0.5 (x/c)^2
    alpha = 0      ->  log(0.5 (x/c)^2 + 1)
    alpha = -inf   ->  1 - exp(-0.5 (x/c)^2)

The probabilistic form divides exp(-rho) by c * Z(alpha).  Z is well defined
only for alpha >= 0.  The density is treated as supported on |x| <= 50 c:
for alpha >= 0.5 the tail mass beyond that is negligible, and at small alpha
(Cauchy-like tails) the truncation is what keeps the normalizer consistent
with quadrature over the working interval.  Z is tabulated on an alpha grid
and interpolated with a monotone cubic Hermite spline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate

from .tensor import (
    DomainError,
    Tensor,
    _make,
    absolute,
    add,
    as_tensor,
    div,
    exp,
    expm1,
    log,
    log1p,
    mul,
    neg,
    power,
    sigmoid,
    sub,
    tmean,
)

SUPPORT_HALF_WIDTH = 50.0  # density support is |x| <= 50 c
ALPHA_LO = 0.001
ALPHA_HI = 3.999


def _rho_float(x, alpha: float, c: float):
    """Branch dispatch for plain float/ndarray inputs."""
    q = (np.asarray(x, dtype=np.float64) / c) ** 2
    if alpha == 2.0:
        return 0.5 * q
    if alpha == 0.0:
        return np.log1p(0.5 * q)
    if alpha == -np.inf:
        return -np.expm1(-0.5 * q)
    beta = abs(alpha - 2.0)
    return (beta / alpha) * ((q / beta + 1.0) ** (alpha / 2.0) - 1.0)


def rho(x, alpha, c):
    """Robust loss of a residual ``x``; shape ``alpha``, scale ``c > 0``.

    ``x`` may be a float, ndarray, or Tensor; ``alpha``/``c`` may be floats
    or (for trainable shape/scale) Tensors.  With float ``alpha`` the branch
    points use their exact closed forms; with a Tensor ``alpha`` the general
    smooth form is used and must stay away from alpha in {0, 2}.
    """
    alpha_is_t = isinstance(alpha, Tensor)
    c_is_t = isinstance(c, Tensor)
    if not c_is_t and float(np.min(np.asarray(c))) <= 0.0:
        raise DomainError(f"scale c must be positive, got {c}")
    if c_is_t and np.any(c.data <= 0.0):
        raise DomainError("scale c must be positive")
    if not isinstance(x, Tensor) and not alpha_is_t and not c_is_t:
        return _rho_float(x, float(alpha), float(c))

    xt = as_tensor(x)
    xc = div(xt, c) if c_is_t else mul(xt, 1.0 / float(c))
    q = mul(xc, xc)
    if not alpha_is_t:
        alpha = float(alpha)
        if alpha == 2.0:
            return mul(q, 0.5)
        if alpha == 0.0:
            return log1p(mul(q, 0.5))
        if alpha == -np.inf:
            return neg(expm1(neg(mul(q, 0.5))))
        if alpha == np.inf:
            raise DomainError("alpha = +inf is not a supported branch")
        beta = abs(alpha - 2.0)
        return mul(power(add(mul(q, 1.0 / beta), 1.0), alpha / 2.0) - 1.0, beta / alpha)
    # Trainable alpha: general form, alpha kept away from {0, 2} by the caller.
    beta = absolute(sub(alpha, 2.0))
    base = add(div(q, beta), 1.0)
    powed = exp(mul(mul(alpha, 0.5), log(base)))
    return mul(div(beta, alpha), sub(powed, 1.0))


@dataclass
class ZSpline:
    """Tabulated log-normalizer log Z(alpha) on [0, 4] with its derivative."""

    grid: np.ndarray
    log_z: np.ndarray
    _spline: interpolate.PchipInterpolator
    _deriv: interpolate.PchipInterpolator

    def log_z_at(self, alpha):
        """log Z(alpha); differentiable when alpha is a Tensor."""
        if isinstance(alpha, Tensor):
            a = alpha
            val = self._spline(a.data)
            der = self._deriv(a.data)

            def vjp(g: Tensor):
                return (mul(g, Tensor(der)),) if a.requires_grad else (None,)

            return _make(np.asarray(val, dtype=np.float64), (a,), vjp, "log_z_spline")
        return float(self._spline(float(alpha)))

    def z_at(self, alpha) -> float:
        return float(np.exp(self._spline(float(alpha))))


def partition_quadrature(alpha: float, half_width: float = SUPPORT_HALF_WIDTH) -> float:
    """Direct adaptive quadrature of Z(alpha) = int exp(-rho(x, alpha, 1)) dx."""
    if alpha < 0:
        raise DomainError(f"Z(alpha) diverges for alpha < 0, got {alpha}")
    val, _ = integrate.quad(
        lambda x: np.exp(-_rho_float(x, alpha, 1.0)),
        -half_width,
        half_width,
        limit=200,
        epsabs=1e-12,
        epsrel=1e-12,
    )
    return float(val)


def build_z_spline(alpha_grid=None) -> ZSpline:
    """Tabulate log Z on a grid covering [0, 4] (knot spacing <= 0.05)."""
    if alpha_grid is None:
        alpha_grid = np.linspace(0.0, 4.0, 81)
    grid = np.asarray(alpha_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("alpha grid must be a 1d array with >= 2 knots")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("alpha grid must be strictly increasing")
    if grid[0] > 0.0 or grid[-1] < 4.0:
        raise DomainError(f"grid [{grid[0]}, {grid[-1]}] must cover [0, 4]")
    if np.max(np.diff(grid)) > 0.05 + 1e-12:
        raise ValueError("grid spacing must be <= 0.05")
    if grid[0] < 0.0:
        raise DomainError("alpha grid outside validity: Z diverges for alpha < 0")
    log_z = np.array([np.log(partition_quadrature(a)) for a in grid])
    spline = interpolate.PchipInterpolator(grid, log_z)
    return ZSpline(grid=grid, log_z=log_z, _spline=spline, _deriv=spline.derivative())


_DEFAULT_SPLINE: ZSpline | None = None


def default_z_spline() -> ZSpline:
    """Shared lazily-built spline on the default grid."""
    global _DEFAULT_SPLINE
    if _DEFAULT_SPLINE is None:
        _DEFAULT_SPLINE = build_z_spline()
    return _DEFAULT_SPLINE


@dataclass
class RobustLossParams:
    """Shape and scale of the robust loss plus the tabulated normalizer."""

    alpha: object = 1.0  # float or Tensor
    c: object = 1.0  # float or Tensor, positive
    z_spline: ZSpline | None = None

    def spline(self) -> ZSpline:
        return self.z_spline if self.z_spline is not None else default_z_spline()


def squash_alpha(raw, lo: float = ALPHA_LO, hi: float = ALPHA_HI) -> Tensor:
    """Smooth reparameterization of an unconstrained tensor onto [lo, hi]."""
    return add(mul(sigmoid(raw), hi - lo), lo)


def positive_scale(raw) -> Tensor:
    """exp reparameterization keeping the scale strictly positive."""
    return exp(raw)


def nll(x, params: RobustLossParams):
    """Mean negative log-likelihood of residuals under the robust density.

    nll = mean(rho(x, alpha, c)) + log c + log Z(alpha).  Valid for
    alpha >= 0.  Differentiable w.r.t. x, alpha, and c (spline derivative
    supplies d log Z / d alpha).
    """
    alpha, c = params.alpha, params.c
    alpha_is_t = isinstance(alpha, Tensor)
    if not alpha_is_t and float(alpha) < 0:
        raise DomainError(f"nll undefined for alpha < 0 (Z diverges), got {alpha}")
    if alpha_is_t and np.any(alpha.data < 0):
        raise DomainError("nll undefined for alpha < 0 (Z diverges)")
    spline = params.spline()
    data_term = rho(x, alpha, c)
    data_mean = tmean(data_term) if isinstance(data_term, Tensor) else float(np.mean(data_term))
    log_c = log(c) if isinstance(c, Tensor) else float(np.log(c))
    log_z = spline.log_z_at(alpha)
    if isinstance(data_mean, Tensor) or isinstance(log_c, Tensor) or isinstance(log_z, Tensor):
        return add(add(as_tensor(data_mean), as_tensor(log_c)), as_tensor(log_z))
    return data_mean + log_c + log_z


def density(x, alpha: float, c: float, z_spline: ZSpline | None = None) -> np.ndarray:
    """p(x | alpha, c) = exp(-rho(x, alpha, c)) / (c Z(alpha)), |x| <= 50 c."""
    if alpha < 0:
        raise DomainError(f"density undefined for alpha < 0, got {alpha}")
    spline = z_spline if z_spline is not None else default_z_spline()
    z = spline.z_at(alpha)
    x = np.asarray(x, dtype=np.float64)
    vals = np.exp(-_rho_float(x, alpha, c)) / (c * z)
    return np.where(np.abs(x) <= SUPPORT_HALF_WIDTH * c, vals, 0.0)
