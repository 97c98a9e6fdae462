"""Graph convolution, adaptive graph convolution and temporal convolution layers.

All layers take and return tensors laid out as (N, C, T, V).  Each one ends
with batch norm, a residual add and a ReLU; the three stages can be switched
off individually to expose the bare operator.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import BatchNorm, ChannelMap, Module, Parameter, Projection, kaiming_uniform
from .tensor import Tensor


class _ResidualBlock(Module):
    """Shared BN -> residual -> ReLU tail."""

    def _setup_tail(self, c_in: int, c_out: int, rng: np.random.Generator, stride: int,
                    use_bn: bool, use_residual: bool, use_activation: bool) -> None:
        self.bn = BatchNorm(c_out) if use_bn else None
        if not use_residual:
            self.residual = None
        elif c_in == c_out and stride == 1:
            self.residual = "identity"
        else:
            self.residual = Projection(c_in, c_out, rng, stride=stride)
        self.use_activation = use_activation

    def _tail(self, y: Tensor, x: Tensor) -> Tensor:
        if self.bn is not None:
            y = self.bn(y)
        if self.residual == "identity":
            y = y + x
        elif self.residual is not None:
            y = y + self.residual(x)
        return T.relu(y) if self.use_activation else y


class GcnLayer(_ResidualBlock):
    """Partitioned graph convolution ``f_out = sum_k (f_in A_k) W_k``.

    The K maps W_k are fused into one 1x1 map C_in -> K*C_out and split
    afterwards; the weights are shared over frames.
    """

    def __init__(self, c_in: int, c_out: int, A: np.ndarray, rng: np.random.Generator,
                 use_bn: bool = True, use_residual: bool = True, use_activation: bool = True):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ConfigError(f"adjacency set must have shape (K, V, V), got {A.shape}")
        self.c_in, self.c_out = c_in, c_out
        self.K, self.V = A.shape[0], A.shape[1]
        self.A = A
        self.conv = ChannelMap(c_in, self.K * c_out, rng)
        self._setup_tail(c_in, c_out, rng, 1, use_bn, use_residual, use_activation)

    def _check(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.c_in or x.shape[3] != self.V:
            raise DimensionError(f"expected (N, {self.c_in}, T, {self.V}) input, got {x.shape}")

    def _project(self, x: Tensor) -> Tensor:
        N, _, t, V = x.shape
        return self.conv(x).reshape(N, self.K, self.c_out, t, V)

    def aggregate(self, x: Tensor) -> Tensor:
        self._check(x)
        A = Tensor(self.A.astype(x.dtype))
        return T.einsum("nkctv,kvw->nctw", self._project(x), A)

    def forward(self, x: Tensor) -> Tensor:
        return self._tail(self.aggregate(x), x)


class AgcnLayer(GcnLayer):
    """Adaptive graph convolution ``f_out = sum_k f_in (A_k + B_k + C_k) W_k``.

    B_k is a free V x V matrix initialised to zero.  C_k is a per-sample
    similarity: embedded dot products of time-averaged features, normalized by
    a softmax over each row.
    """

    def __init__(self, c_in: int, c_out: int, A: np.ndarray, rng: np.random.Generator,
                 embed_channels: int | None = None, use_static: bool = True,
                 use_similarity: bool = True, **tail):
        super().__init__(c_in, c_out, A, rng, **tail)
        self.embed_channels = embed_channels or max(1, c_out // 4)
        self.use_static = use_static
        self.use_similarity = use_similarity
        self.B = Parameter(np.zeros((self.K, self.V, self.V)))
        self.theta = ChannelMap(c_in, self.K * self.embed_channels, rng)
        self.phi = ChannelMap(c_in, self.K * self.embed_channels, rng)

    def similarity(self, x: Tensor) -> Tensor:
        """Row-stochastic (N, K, V, V) data-dependent adjacency."""
        N, _, _, V = x.shape
        ce = self.embed_channels
        theta = self.theta(x).mean(axis=2).reshape(N, self.K, ce, V)
        phi = self.phi(x).mean(axis=2).reshape(N, self.K, ce, V)
        logits = T.scale(T.einsum("nkcv,nkcw->nkvw", theta, phi), 1.0 / ce)
        return T.softmax(logits, axis=-1)

    def adjacency(self, x: Tensor) -> Tensor:
        adj = self.B
        if self.use_static:
            adj = adj + Tensor(self.A.astype(x.dtype))
        if self.use_similarity:
            adj = adj + self.similarity(x)
        return adj

    def aggregate(self, x: Tensor) -> Tensor:
        self._check(x)
        adj = self.adjacency(x)
        y = self._project(x)
        if adj.ndim == 4:
            return T.einsum("nkctv,nkvw->nctw", y, adj)
        return T.einsum("nkctv,kvw->nctw", y, adj)


class TcnLayer(_ResidualBlock):
    """1 x K_t convolution along time with zero padding (K_t - 1) / 2."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel_size: int = 9,
                 stride: int = 1, use_bn: bool = True, use_residual: bool = True,
                 use_activation: bool = True):
        if kernel_size % 2 == 0:
            raise ConfigError(f"temporal kernel size must be odd, got {kernel_size}")
        if stride < 1:
            raise ConfigError(f"stride must be positive, got {stride}")
        self.c_in, self.c_out = c_in, c_out
        self.kernel_size, self.stride = kernel_size, stride
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, kernel_size, 1), c_in * kernel_size))
        self._setup_tail(c_in, c_out, rng, stride, use_bn, use_residual, use_activation)

    def convolve(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DimensionError(f"expected (N, {self.c_in}, T, V) input, got {x.shape}")
        return T.conv2d_time(x, self.weight, stride=self.stride)

    def forward(self, x: Tensor) -> Tensor:
        return self._tail(self.convolve(x), x)
