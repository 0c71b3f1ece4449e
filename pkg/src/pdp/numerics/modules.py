"""Small parameter-container modules built on the tape."""

from __future__ import annotations

import numpy as np

from . import tensor as F
from .rng import Rng
from .tensor import Tensor


def _uniform_init(rng: Rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return (2.0 * rng.uniform(shape) - 1.0) * bound


class Linear:
    def __init__(self, rng: Rng, n_in: int, n_out: int, name: str, zero_init: bool = False):
        self.name = name
        if zero_init:
            w = np.zeros((n_in, n_out))
            b = np.zeros(n_out)
        else:
            w = _uniform_init(rng, n_in, (n_in, n_out))
            b = _uniform_init(rng, n_in, (n_out,))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(F.matmul(x, self.w), self.b)

    def params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


_ACTIVATIONS = {"relu": F.relu, "gelu": F.gelu, "tanh": F.tanh}


class MLP:
    """Stack of Linear layers with the given activation between them."""

    def __init__(self, rng: Rng, sizes: list[int], name: str, activation: str = "relu",
                 final_activation: str | None = None, zero_init_last: bool = False):
        self.layers = [
            Linear(rng, sizes[i], sizes[i + 1], f"{name}.{i}", zero_init=zero_init_last and i == len(sizes) - 2)
            for i in range(len(sizes) - 1)
        ]
        self.act = _ACTIVATIONS[activation]
        self.final_act = _ACTIVATIONS[final_activation] if final_activation else None

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.act(x)
            elif self.final_act is not None:
                x = self.final_act(x)
        return x

    def params(self) -> list[tuple[str, Tensor]]:
        return [p for layer in self.layers for p in layer.params()]


class LayerNorm:
    def __init__(self, dim: int, name: str):
        self.name = name
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)

    def params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]


class Embedding:
    def __init__(self, rng: Rng, vocab: int, dim: int, name: str, scale: float = 0.02):
        self.name = name
        self.table = Tensor(rng.normal((vocab, dim)) * scale, requires_grad=True)

    def __call__(self, idx: np.ndarray) -> Tensor:
        return F.gather_rows(self.table, idx)

    def params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.table", self.table)]


def collect_params(*modules) -> list[tuple[str, Tensor]]:
    out = []
    for m in modules:
        out.extend(m.params())
    return out


def set_params(params: list[tuple[str, Tensor]], values: dict[str, np.ndarray]) -> None:
    for name, p in params:
        if name not in values:
            raise KeyError(f"missing value for parameter {name!r}")
        if values[name].shape != p.data.shape:
            raise ValueError(f"shape mismatch for {name!r}: {values[name].shape} vs {p.data.shape}")
        p.data[...] = values[name]
