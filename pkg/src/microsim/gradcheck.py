"""Central finite-difference checking of analytic gradients.

Used by the test suites of every module: any differentiable operation is
wrapped into a scalar-valued function of one tensor and compared elementwise
against (f(x+h) - f(x-h)) / 2h.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor, grad


class ProbeError(RuntimeError):
    """A finite-difference probe produced a non-finite value."""


@dataclass
class CheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    tolerance: float
    step: float
    failures: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max()) if self.rel_errors.size else 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def gradient_check(
    f: Callable[[Tensor], Tensor],
    x,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> CheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Relative error per element is |a - n| / max(1, |a|, |n|); elements above
    ``tolerance`` are recorded as failures.  A non-finite value at any probe
    point raises :class:`ProbeError` naming the probe.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    out = f(x0)
    if out.size != 1:
        raise ShapeError(f"gradient_check needs a scalar-valued f, got shape {out.shape}")
    analytic = grad(out, [x0])[0].data.reshape(-1)

    flat = x0.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        for sign in (+1.0, -1.0):
            probe = flat.copy()
            probe[i] += sign * step
            try:
                val = f(Tensor(probe.reshape(x0.shape))).item()
            except NonFiniteError as err:
                raise ProbeError(
                    f"non-finite f at probe element {i}, offset {sign * step:+g}"
                ) from err
            if not np.isfinite(val):
                raise ProbeError(
                    f"non-finite f at probe element {i}, offset {sign * step:+g}"
                )
            if sign > 0:
                fp = val
            else:
                fm = val
        numeric[i] = (fp - fm) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    failures = [(int(i), float(rel[i])) for i in np.nonzero(rel > tolerance)[0]]
    return CheckReport(
        analytic=analytic,
        numeric=numeric,
        rel_errors=rel,
        tolerance=tolerance,
        step=step,
        failures=failures,
    )
