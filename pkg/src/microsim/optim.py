"""Parameter-update rules: SGD, Adam, AdamP with tangent-space projection,
and hard weight clipping.

The Adam update places the stabilizer inside the square root,
``delta_theta = -S_hat / sqrt(R_hat + delta)``, which differs from the more
common ``sqrt(R_hat) + delta`` form; both moments use 1 - beta^t bias
correction.  AdamP is identical except that when ``-(theta . grad) < lambda``
the radial component of the update along the unit-normalized parameter is
removed before applying it.  Weight decay, when enabled, is decoupled: it is
added after the adaptive step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError


@dataclass
class OptimizerState:
    """Per-parameter moment accumulators and hyperparameters."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    lambda_thresh: float = 0.1
    weight_decay: float = 0.0
    t: int = 0
    s: np.ndarray | None = None
    r: np.ndarray | None = None

    def _ensure(self, param: np.ndarray):
        if self.s is None:
            self.s = np.zeros_like(param)
            self.r = np.zeros_like(param)
        elif self.s.shape != param.shape:
            raise ValueError(f"state shaped {self.s.shape} used with parameter {param.shape}")


def _check_grad(grad: np.ndarray):
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient passed to optimizer step")


def sgd_step(param, grad, lr: float) -> np.ndarray:
    """param - lr * grad."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ValueError(f"param {param.shape} vs grad {grad.shape}")
    _check_grad(grad)
    return param - lr * grad


def _adam_delta(grad: np.ndarray, state: OptimizerState) -> np.ndarray:
    """Moment updates and bias-corrected step direction (shared by Adam/AdamP)."""
    state.t += 1
    state.s = state.beta1 * state.s + (1.0 - state.beta1) * grad
    state.r = state.beta2 * state.r + (1.0 - state.beta2) * grad * grad
    s_hat = state.s / (1.0 - state.beta1**state.t)
    r_hat = state.r / (1.0 - state.beta2**state.t)
    return -s_hat / np.sqrt(r_hat + state.delta)


def adam_step(param, grad, state: OptimizerState) -> np.ndarray:
    """One Adam update; increments the step counter and moment accumulators."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ValueError(f"param {param.shape} vs grad {grad.shape}")
    _check_grad(grad)
    state._ensure(param)
    delta = _adam_delta(grad, state)
    out = param + state.lr * delta
    if state.weight_decay > 0.0:
        out = out - state.lr * state.weight_decay * param
    return out


def project_tangent(param: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Remove the radial component of ``delta`` along unit-normalized ``param``.

    Pi_theta(d) = d - (theta_hat . d) theta_hat.  A zero-norm parameter is
    returned unprojected.
    """
    norm = np.linalg.norm(param)
    if norm == 0.0:
        return delta
    unit = param / norm
    return delta - np.sum(unit * delta) * unit


def adamp_step(param, grad, state: OptimizerState) -> np.ndarray:
    """Adam with conditional tangent-space projection of the update.

    The projection is applied when -(param . grad) < lambda_thresh; with the
    threshold below any achievable value the trajectory is bit-identical to
    :func:`adam_step`.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ValueError(f"param {param.shape} vs grad {grad.shape}")
    _check_grad(grad)
    state._ensure(param)
    delta = _adam_delta(grad, state)
    if -np.sum(param * grad) < state.lambda_thresh:
        delta = project_tangent(param, delta)
    out = param + state.lr * delta
    if state.weight_decay > 0.0:
        out = out - state.lr * state.weight_decay * param
    return out


def weight_clip(params, clip: float) -> np.ndarray:
    """Clamp every entry to [-clip, +clip]."""
    if clip <= 0:
        raise ValueError(f"clip must be positive, got {clip}")
    return np.clip(np.asarray(params, dtype=np.float64), -clip, clip)


@dataclass
class Optimizer:
    """Convenience wrapper stepping a list of graph-leaf tensors in place."""

    kind: str = "sgd"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    lambda_thresh: float = 0.1
    weight_decay: float = 0.0
    _states: dict = field(default_factory=dict)

    def step(self, params) -> None:
        for p in params:
            if p.grad is None:
                continue
            if self.kind == "sgd":
                p.data = sgd_step(p.data, p.grad, self.lr)
                continue
            st = self._states.get(id(p))
            if st is None:
                st = OptimizerState(
                    lr=self.lr,
                    beta1=self.beta1,
                    beta2=self.beta2,
                    delta=self.delta,
                    lambda_thresh=self.lambda_thresh,
                    weight_decay=self.weight_decay,
                )
                self._states[id(p)] = st
            if self.kind == "adam":
                p.data = adam_step(p.data, p.grad, st)
            elif self.kind == "adamp":
                p.data = adamp_step(p.data, p.grad, st)
            else:
                raise ValueError(f"unknown optimizer {self.kind!r}")

    def zero_grad(self, params) -> None:
        for p in params:
            p.grad = None
