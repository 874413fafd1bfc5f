"""Small module system: parameter containers, dense layers, layer norm."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .rng import SeededRng
from .tensor import Parameter, ShapeError, Tensor


def xavier_uniform(rng: SeededRng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape or (fan_in, fan_out), -limit, limit)


class Module:
    """Container whose ``Parameter`` / ``Module`` attributes form a named tree."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                value.name = path
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{path}.{i}"
                        yield item.name, item
            elif isinstance(value, dict):
                for k in sorted(value):
                    item = value[k]
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{k}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            p.assign(state[name])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    """``y = x W + b`` on the last axis."""

    def __init__(self, rng: SeededRng, in_dim: int, out_dim: int, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Parameter(xavier_uniform(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Linear: expected last dim {self.in_dim}, got shape {x.shape}")
        y = ops.matmul(x, self.weight) if x.ndim >= 2 else ops.matmul(ops.reshape(x, (1, -1)), self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y if x.ndim >= 2 else ops.reshape(y, (self.out_dim,))


class MLP(Module):
    """Stack of dense layers with an activation between (not after) them."""

    def __init__(self, rng: SeededRng, dims: list[int], activation: str = "relu", final_activation: str = "identity"):
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        self.activation = activation
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            last = i == len(self.layers) - 1
            x = ops.ACTIVATIONS[self.final_activation if last else self.activation](x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = ops.mean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = ops.mean(centered * centered, axis=-1, keepdims=True)
        return centered / ops.sqrt(var + self.eps) * self.gain + self.shift
