"""Parameter containers and the handful of layers the models are built from."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Attribute-discovered tree of parameters, buffers and sub-modules.

    Children are visited in attribute-assignment order, so parameter names
    and ordering are stable across runs.
    """

    training = True

    def __setattr__(self, name, value):
        if isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            value = ModuleList(value)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data) for name, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state) -> None:
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(targets) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:5]}")
        for name, p in targets.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype).copy()
        for name, buf in buffers.items():
            buf[...] = np.asarray(state[name], dtype=buf.dtype).reshape(buf.shape)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, items):
        for i, item in enumerate(items):
            object.__setattr__(self, str(i), item)

    def __iter__(self):
        return iter([v for v in vars(self).values() if isinstance(v, Module)])

    def __len__(self):
        return sum(1 for _ in self)

    def __getitem__(self, i):
        return list(self)[i]


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _ConvNd(Module):
    nd = 0

    def __init__(self, in_channels, out_channels, kernel_size, rng, padding=0, bias=True, dtype=DEFAULT_DTYPE):
        k = (kernel_size,) * self.nd if np.isscalar(kernel_size) else tuple(kernel_size)
        fan_in = in_channels * int(np.prod(k))
        self.weight = Parameter(he_uniform(rng, (out_channels, in_channels) + k, fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self.padding = padding
        self.in_channels = in_channels
        self.out_channels = out_channels


class Conv2d(_ConvNd):
    nd = 2

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, padding=self.padding)


class Conv3d(_ConvNd):
    nd = 3

    def forward(self, x):
        return ops.conv3d(x, self.weight, self.bias, padding=self.padding)


class BatchNorm(Module):
    """Batch normalisation over channel axis 1 of 4-D or 5-D input."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=DEFAULT_DTYPE):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )
