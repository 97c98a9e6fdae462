"""Spatial and temporal multi-head self-attention over skeleton sequences.

Spatial attention folds T into the batch and attends over the V joints of
each frame; temporal attention folds V into the batch and attends over the T
frames of each joint.  Both share one implementation that differs only in
which axis is treated as the sequence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import BatchNorm, ChannelMap, Module, Projection
from .tensor import Tensor


@dataclass
class SelfAttentionConfig:
    """Channel bookkeeping of one attention layer.

    ``qk_ratio`` sets the total query/key width relative to ``c_out``.  The
    total value width is ``c_out`` when ``value_ratio`` is 1.0 (default) or
    ``value_ratio * c_out`` otherwise.
    """

    c_in: int
    c_out: int
    heads: int = 8
    qk_ratio: float = 0.25
    value_ratio: float = 1.0
    drop_rate: float = 0.1
    d_qk: int | None = None
    d_v: int | None = None

    def __post_init__(self) -> None:
        if self.d_qk is None:
            self.d_qk = int(round(self.qk_ratio * self.c_out))
        if self.d_v is None:
            self.d_v = int(round(self.value_ratio * self.c_out))
        self.validate()

    def validate(self) -> None:
        if self.heads < 1:
            raise ConfigError("head count must be positive")
        for name in ("d_qk", "d_v"):
            total = getattr(self, name)
            if total < self.heads or total % self.heads:
                raise ConfigError(f"{name}={total} is not a positive multiple of {self.heads} heads")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError(f"drop rate must lie in [0, 1), got {self.drop_rate}")

    @property
    def head_qk(self) -> int:
        return self.d_qk // self.heads

    @property
    def head_v(self) -> int:
        return self.d_v // self.heads

    def core_parameters(self) -> int:
        return self.c_in * (2 * self.d_qk + self.d_v) + self.d_v * self.c_out


def drop_attention(logits: Tensor, drop_rate: float, training: bool, rng: np.random.Generator,
                   base_mask: np.ndarray | None = None) -> Tensor:
    """Mask whole key columns of each attention logit matrix to -inf.

    Each column of each (L_q, L_k) matrix is dropped with probability
    ``drop_rate``.  Matrices in which some row would lose every admissible
    column are redrawn.  ``base_mask`` marks entries already excluded (for
    instance by block partitioning).  Eval mode and rate 0 are identities.
    """
    if not 0.0 <= drop_rate < 1.0:
        raise ConfigError(f"drop rate must lie in [0, 1), got {drop_rate}")
    if not training or drop_rate == 0.0:
        return logits
    shape = logits.shape
    col_shape = shape[:-2] + (1, shape[-1])
    mask = rng.random(col_shape) < drop_rate
    allowed = np.ones(shape[-2:], dtype=bool) if base_mask is None else ~base_mask

    def dead(m: np.ndarray) -> np.ndarray:
        alive = allowed & ~m
        return (~alive.any(axis=-1)).any(axis=-1)

    bad = dead(mask)
    while bad.any():
        mask[bad] = rng.random((int(bad.sum()),) + col_shape[-2:]) < drop_rate
        bad = dead(mask)
    return T.masked_fill(logits, mask, -np.inf)


def tsa_block_partition(T_len: int, d_block: int) -> list[range]:
    """Contiguous frame ranges of length ``d_block`` (the last may be shorter)."""
    if d_block < 1:
        raise ConfigError(f"d_block must be >= 1, got {d_block}")
    return [range(s, min(s + d_block, T_len)) for s in range(0, T_len, d_block)]


def block_mask(T_len: int, d_block: int) -> np.ndarray:
    """Boolean (T, T) mask that is True for frame pairs in different blocks."""
    block_id = np.empty(T_len, dtype=np.int64)
    for b, r in enumerate(tsa_block_partition(T_len, d_block)):
        block_id[r.start:r.stop] = b
    return block_id[:, None] != block_id[None, :]


class SelfAttention(Module):
    """Multi-head scaled dot-product self-attention along one skeleton axis.

    ``forward`` = input BN -> attention -> (temporal stride) -> residual -> ReLU.
    ``attend`` exposes the bare attention map ``W_o(concat_h softmax(QK^T/sqrt d) V)``.
    """

    axis = "spatial"

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, heads: int = 8,
                 qk_ratio: float = 0.25, value_ratio: float = 1.0, drop_rate: float = 0.1,
                 d_qk: int | None = None, d_v: int | None = None, stride: int = 1,
                 d_block: int | None = None, use_bn: bool = True, use_residual: bool = True,
                 use_activation: bool = True, seed: int | None = None):
        self.config = SelfAttentionConfig(c_in, c_out, heads, qk_ratio, value_ratio, drop_rate, d_qk, d_v)
        cfg = self.config
        if stride < 1:
            raise ConfigError(f"stride must be positive, got {stride}")
        if d_block is not None and d_block < 1:
            raise ConfigError(f"d_block must be >= 1, got {d_block}")
        self.c_in, self.c_out, self.stride, self.d_block = c_in, c_out, stride, d_block
        self.wq = ChannelMap(c_in, cfg.d_qk, rng)
        self.wk = ChannelMap(c_in, cfg.d_qk, rng)
        self.wv = ChannelMap(c_in, cfg.d_v, rng)
        self.wo = ChannelMap(cfg.d_v, c_out, rng)
        self.bn = BatchNorm(c_in) if use_bn else None
        if not use_residual:
            self.residual = None
        elif c_in == c_out and stride == 1:
            self.residual = "identity"
        else:
            self.residual = Projection(c_in, c_out, rng, stride=stride)
        self.use_activation = use_activation
        self.rng = np.random.default_rng(seed if seed is not None else rng.integers(2**63))
        self.capture = False
        self.last_scores: np.ndarray | None = None

    # (N, C, T, V) <-> (N, B, H, L, d) where B is the folded axis and L the attended one
    def _split_heads(self, x: Tensor, d: int) -> Tensor:
        N, _, t, V = x.shape
        x = x.reshape(N, self.config.heads, d, t, V)
        if self.axis == "spatial":
            return x.permute(0, 3, 1, 4, 2)
        return x.permute(0, 4, 1, 3, 2)

    def _merge_heads(self, z: Tensor) -> Tensor:
        if self.axis == "spatial":
            N, t, H, V, d = z.shape
            return z.permute(0, 2, 4, 1, 3).reshape(N, H * d, t, V)
        N, V, H, t, d = z.shape
        return z.permute(0, 2, 4, 3, 1).reshape(N, H * d, t, V)

    def _mask(self, x: Tensor) -> np.ndarray | None:
        if self.axis != "temporal" or self.d_block is None or self.d_block >= x.shape[2]:
            return None
        return block_mask(x.shape[2], self.d_block)

    def attend(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DimensionError(f"expected (N, {self.c_in}, T, V) input, got {x.shape}")
        cfg = self.config
        q = self._split_heads(self.wq(x), cfg.head_qk)
        k = self._split_heads(self.wk(x), cfg.head_qk)
        v = self._split_heads(self.wv(x), cfg.head_v)
        logits = T.scale(T.matmul(q, k.permute(0, 1, 2, 4, 3)), 1.0 / np.sqrt(cfg.head_qk))
        mask = self._mask(x)
        if mask is not None:
            logits = T.masked_fill(logits, mask, -np.inf)
        if self.capture:
            with T.no_grad():
                self.last_scores = T.softmax(logits.detach(), axis=-1).data.copy()
        logits = drop_attention(logits, cfg.drop_rate, self.training, self.rng, base_mask=mask)
        scores = T.softmax(logits, axis=-1)
        return self.wo(self._merge_heads(T.matmul(scores, v)))

    def forward(self, x: Tensor) -> Tensor:
        y = self.attend(self.bn(x) if self.bn is not None else x)
        if self.stride > 1:
            y = y[:, :, ::self.stride]
        if self.residual == "identity":
            y = y + x
        elif self.residual is not None:
            y = y + self.residual(x)
        return T.relu(y) if self.use_activation else y


class SpatialSelfAttention(SelfAttention):
    """Attention among the joints of each frame; captured scores are (N, T, H, V, V)."""

    axis = "spatial"


class TemporalSelfAttention(SelfAttention):
    """Attention among the frames of each joint; captured scores are (N, V, H, T, T).

    With ``d_block`` set, frames attend only within contiguous blocks of that
    length.
    """

    axis = "temporal"
