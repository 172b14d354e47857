from __future__ import annotations

import math

import numpy as np

from .functional import normalize_rows
from .tensor import Tensor, matmul, no_grad, relu


class Dense:
    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32, name="dense"):
        self.in_dim, self.out_dim, self.name = in_dim, out_dim, name
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        if rng is None:
            w = np.zeros((in_dim, out_dim))
        else:
            w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        self.weight = Tensor(w.astype(dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: expected input width {self.in_dim}, got {x.shape[-1]}")
        return matmul(x, self.weight) + self.bias


class ReLU:
    def parameters(self):
        return []

    def __call__(self, x):
        return relu(x)


class L2Normalize:
    def parameters(self):
        return []

    def __call__(self, x):
        return normalize_rows(x)


class Sequential:
    def __init__(self, layers, name="seq"):
        self.layers = list(layers)
        self.name = name

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def mlp(dims, rng, dtype=np.float32, name="mlp", final_relu=False) -> Sequential:
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(Dense(a, b, rng, dtype, name=f"{name}.{i}"))
        if i < len(dims) - 2 or final_relu:
            layers.append(ReLU())
    return Sequential(layers, name=name)


def forward(graph, x, record=True):
    """Run a layer stack; with ``record=False`` nothing is put on the tape."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if record:
        return graph(x)
    with no_grad():
        return graph(x)
