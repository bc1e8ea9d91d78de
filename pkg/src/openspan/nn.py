"""Small trainable building blocks: parameter init and two-layer MLPs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, matmul, relu
from .errors import ConfigError

ACTIVATIONS = ("relu", "identity")


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 name: str | None = None) -> Tensor:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialisation."""
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class Mlp2:
    """activation(x @ w1 + b1) @ w2 + b2"""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    activation: str = "relu"

    @classmethod
    def create(cls, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int,
               activation: str = "relu") -> "Mlp2":
        if activation not in ACTIVATIONS:
            raise ConfigError(f"activation: unknown value {activation!r}, expected one of {ACTIVATIONS}")
        return cls(
            w1=uniform_init(rng, (d_in, d_hidden), d_in),
            b1=Tensor(np.zeros(d_hidden), requires_grad=True),
            w2=uniform_init(rng, (d_hidden, d_out), d_hidden),
            b2=Tensor(np.zeros(d_out), requires_grad=True),
            activation=activation,
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @property
    def d_in(self) -> int:
        return self.w1.data.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.data.shape[1]


def mlp2_forward(x: Tensor, mlp: Mlp2) -> Tensor:
    h = add(matmul(x, mlp.w1), mlp.b1)
    if mlp.activation == "relu":
        h = relu(h)
    return add(matmul(h, mlp.w2), mlp.b2)
