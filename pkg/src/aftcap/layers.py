"""Small parameter containers shared by the encoder and decoder."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, add, matmul


class Linear:
    """Affine map x @ w + b with gaussian init scaled by 1/sqrt(fan_in)."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, name: str):
        scale = 1.0 / np.sqrt(d_in)
        self.w = Tensor(rng.normal(0.0, scale, size=(d_in, d_out)), requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(d_out), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


def collect_parameters(tensors) -> dict[str, Tensor]:
    """Index parameters by their (unique) names."""
    out = {}
    for t in tensors:
        if t.name is None:
            raise ValueError("parameter tensor without a name")
        if t.name in out:
            raise ValueError(f"duplicate parameter name {t.name}")
        out[t.name] = t
    return out
