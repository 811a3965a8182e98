"""Parameter containers and the handful of layers shared by both streams."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor
from .tensor import ops


class Module:
    """Attribute-walking parameter container.

    Parameters are discovered in attribute insertion order, so naming is
    stable across runs and checkpoint layouts are deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in self.__dict__.items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(rng: np.random.Generator, shape, std: float | None = None, dtype=np.float64,
          fan_in: int | None = None, value: float | None = None) -> Tensor:
    if value is not None:
        data = np.full(shape, value, dtype=dtype)
    else:
        if std is None:
            fan = fan_in if fan_in is not None else int(np.prod(shape[:-1])) or 1
            std = 1.0 / math.sqrt(fan)
        data = rng.normal(0.0, std, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, dtype=np.float64):
        self.weight = param(rng, (d_in, d_out), fan_in=d_in, dtype=dtype)
        self.bias = param(rng, (d_out,), value=0.0, dtype=dtype) if bias else None

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.layer_norm(x, self.gamma, self.beta)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, bias: bool = True, dtype=np.float64):
        self.weight = param(rng, (c_out, c_in, k, k), fan_in=c_in * k * k, dtype=dtype)
        self.bias = param(rng, (c_out,), value=0.0, dtype=dtype) if bias else None
        self._k = k

    def __call__(self, x, stride=1, padding="same"):
        return ops.conv2d(x, self.weight, self.bias, stride=stride, padding=padding)


class Mlp(Module):
    def __init__(self, rng, dim: int, hidden: int, bias: bool = True, dtype=np.float64):
        self.fc1 = Linear(rng, dim, hidden, bias=bias, dtype=dtype)
        self.fc2 = Linear(rng, hidden, dim, bias=bias, dtype=dtype)

    def __call__(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


def tokens_to_map(tokens, grid: tuple[int, int]):
    """(N, h*w, C) tokens -> (N, C, h, w) feature map."""
    n, L, c = tokens.shape
    h, w = grid
    return ops.transpose(ops.reshape(tokens, (n, h, w, c)), (0, 3, 1, 2))


def map_to_tokens(fmap):
    n, c, h, w = fmap.shape
    return ops.reshape(ops.transpose(fmap, (0, 2, 3, 1)), (n, h * w, c))
