"""Parameter containers and the small set of generic layers the networks use."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


class Parameter(Tensor):
    """A learnable leaf tensor."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype or T.get_default_dtype())


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal module tree.

    Parameters, sub-modules and lists of sub-modules stored as attributes are
    discovered in attribute order.  Subclasses list NumPy state arrays that
    belong in checkpoints (e.g. running statistics) in ``buffer_names``.
    """

    buffer_names: tuple[str, ...] = ()
    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class BatchNorm(Module):
    """Per-channel batch normalization over axis 1 of an (N, C, ...) input."""

    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        if eps <= 0:
            raise ConfigError("epsilon must be positive")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=T.get_default_dtype())
        self.running_var = np.ones(channels, dtype=T.get_default_dtype())

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=self.training, momentum=self.momentum, eps=self.eps)


class ChannelMap(Module):
    """Bias-free 1x1 map over axis 1 of an (N, C_in, T, V) tensor, optionally strided in T."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, stride: int = 1):
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in), c_in))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.c_in:
            raise DimensionError(f"expected {self.c_in} input channels, got shape {x.shape}")
        if self.stride > 1:
            x = x[:, :, ::self.stride]
        return T.einsum("oc,nctv->notv", self.weight, x)


class Linear(Module):
    """Fully connected layer with bias, acting on (N, C_in)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = Parameter(kaiming_uniform(rng, (c_in, c_out), c_in) / np.sqrt(6.0))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class Projection(Module):
    """Residual shortcut for a width or stride change: strided 1x1 map followed by BN."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, stride: int = 1):
        self.map = ChannelMap(c_in, c_out, rng, stride=stride)
        self.bn = BatchNorm(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.map(x))
