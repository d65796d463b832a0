"""Parameter containers and small layers on top of :mod:`copygec.autodiff`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Walks attributes to find parameters and sub-modules, torch-style."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen: set[int] = set()
        for name, p in self._walk(prefix):
            if id(p) in seen:
                continue  # tied weights are reported once, under their first name
            seen.add(id(p))
            yield name, p

    def _walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            full = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value._walk(full + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    yield from sub._walk(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self._set_mode(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _set_mode(self, mode: bool) -> None:
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value._set_mode(mode)
            elif isinstance(value, (list, tuple)):
                for sub in value:
                    if isinstance(sub, Module):
                        sub._set_mode(mode)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64, bias: bool = True):
        self.weight = parameter(xavier_uniform(rng, d_in, d_out, dtype))
        self.bias = parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float64, eps: float = 1e-5):
        self.gain = parameter(np.ones(d, dtype=dtype))
        self.bias = parameter(np.zeros(d, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.p, self.training, self.rng)
