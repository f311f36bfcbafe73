"""Parameter containers on top of :mod:`mstcassi.tensor`."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


def uniform_init(rng, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return param(_rng(rng).uniform(-bound, bound, size=shape))


class Module:
    """Anything holding trainable tensors or child modules as attributes.

    Parameters are discovered in attribute insertion order, which fixes the
    naming and ordering used by the optimizer and the weight files.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (e.g. to float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, pad: int | None = None,
                 groups: int = 1, bias: bool = False, rng=None):
        if pad is None:
            pad = (k - 1) // 2
        self.stride, self.pad, self.groups = stride, pad, groups
        self.cin, self.cout, self.k = cin, cout, k
        fan_in = (cin // groups) * k * k
        self.weight = uniform_init(rng, (cout, cin // groups, k, k), fan_in)
        self.bias = uniform_init(rng, (cout,), fan_in) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad, groups=self.groups)

    def macs(self, h_out: int, w_out: int) -> int:
        return h_out * w_out * self.cout * (self.cin // self.groups) * self.k * self.k


class ConvTranspose2d(Module):
    """2x2, stride-2 transposed convolution."""

    def __init__(self, cin: int, cout: int, bias: bool = False, rng=None):
        self.cin, self.cout = cin, cout
        self.weight = uniform_init(rng, (cin, cout, 2, 2), cin * 4)
        self.bias = uniform_init(rng, (cout,), cin * 4) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias)

    def macs(self, h_in: int, w_in: int) -> int:
        return h_in * w_in * self.cin * self.cout * 4


class LayerNorm(Module):
    """Normalises a ``C x H x W`` feature map across channels at each pixel."""

    def __init__(self, dim: int):
        self.dim = dim
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, 0, self.gamma, self.beta)
