"""Small fully-connected networks used by the desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Rng
from ..tensor import Tensor, add, leaky_relu, matmul, reshape, sigmoid

_ACTIVATIONS = ("leaky", "sigmoid", "identity")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and per-layer activation names of a feed-forward net."""

    in_dim: int
    widths: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least two layers")
        if len(self.widths) != len(self.activations):
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}; options: {_ACTIVATIONS}")

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @classmethod
    def three_layer(cls, in_dim: int, hidden: int, out_dim: int, final: str = "identity"):
        return cls(
            in_dim=in_dim,
            widths=(hidden, hidden, out_dim),
            activations=("leaky", "leaky", final),
        )


class Mlp:
    """Feed-forward net with He-scaled normal init (leaky slope 0.2)."""

    def __init__(self, spec: MlpSpec, rng: Rng):
        self.spec = spec
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        fan_in = spec.in_dim
        for width in spec.widths:
            w = rng.standard_normal((fan_in, width)) * np.sqrt(2.0 / fan_in)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(width), requires_grad=True))
            fan_in = width

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            h = add(matmul(h, w), reshape(b, (1, b.size)))
            if act == "leaky":
                h = leaky_relu(h, 0.2)
            elif act == "sigmoid":
                h = sigmoid(h)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}_w{i}"] = w.data
            out[f"{prefix}_b{i}"] = b.data
        return out
