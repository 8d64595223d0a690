"""Small feed-forward building blocks on top of the autodiff core."""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor
from .optim import xavier_uniform


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = xavier_uniform((in_dim, out_dim), rng=rng)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """Affine layers with relu between; no activation after the last layer."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out


def load_mlp_params(mlp: MLP, named: dict[str, Tensor], prefix: str) -> None:
    for i, layer in enumerate(mlp.layers):
        layer.weight = named[f"{prefix}.{i}.weight"]
        layer.bias = named[f"{prefix}.{i}.bias"]


def weight_hash(tensors: dict[str, Tensor]) -> str:
    """Order-independent content hash of named tensors."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name].data).tobytes())
    return h.hexdigest()


def snapshot(params: list[Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def restore(params: list[Tensor], saved: list[np.ndarray]) -> None:
    for p, s in zip(params, saved):
        p.data = s.copy()
