"""Stream assembly: ST-GCN/AGCN baselines, S-TR, T-TR and their variants."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import SelfAttention, SpatialSelfAttention, TemporalSelfAttention
from .conv import AgcnLayer, GcnLayer, TcnLayer, _ResidualBlock
from .errors import ConfigError, ContractError, DimensionError
from .graph import build_adjacency, fully_connected_adjacency, load_topology
from .nn import BatchNorm, Linear, Module
from .tensor import Tensor

SPATIAL_OPS = ("GCN", "GCN-fc", "AGCN", "AGCN-noA", "SSA", "AUG-GCN")
TEMPORAL_OPS = ("TCN", "TSA", "AUG-TCN")

# kind -> (spatial op, temporal op) for the feature-extraction layers and for the rest
STREAM_KINDS: dict[str, tuple[tuple[str, str], tuple[str, str]]] = {
    "ST-GCN": (("GCN", "TCN"), ("GCN", "TCN")),
    "ST-GCN-fc": (("GCN-fc", "TCN"), ("GCN-fc", "TCN")),
    "AGCN-1s": (("AGCN", "TCN"), ("AGCN", "TCN")),
    "AGCN-1s-noA": (("AGCN-noA", "TCN"), ("AGCN-noA", "TCN")),
    "S-TR": (("GCN", "TCN"), ("SSA", "TCN")),
    "T-TR": (("GCN", "TCN"), ("GCN", "TSA")),
    "T-TR-agcn": (("GCN", "TCN"), ("AGCN", "TSA")),
    "ST-TR-1s": (("GCN", "TCN"), ("SSA", "TSA")),
    "S-TR-augmented": (("GCN", "TCN"), ("AUG-GCN", "TCN")),
    "T-TR-augmented": (("GCN", "TCN"), ("GCN", "AUG-TCN")),
}


@dataclass
class LayerSpec:
    spatial_op: str
    temporal_op: str
    c_in: int
    c_out: int
    stride: int = 1
    d_block: int | None = None

    def validate(self) -> None:
        if self.spatial_op not in SPATIAL_OPS:
            raise ConfigError(f"unknown spatial op {self.spatial_op!r}")
        if self.temporal_op not in TEMPORAL_OPS:
            raise ConfigError(f"unknown temporal op {self.temporal_op!r}")
        if self.c_in < 1 or self.c_out < 1 or self.stride < 1:
            raise ConfigError(f"invalid layer extents {self}")
        if "AUG" in self.spatial_op + self.temporal_op and self.c_out % 4:
            raise ConfigError(f"augmented layers need C_out divisible by 4, got {self.c_out}")


@dataclass
class NetworkConfig:
    """Declarative description of one stream.

    ``strides`` defaults to 2 wherever the channel count grows (after the
    first layer) and 1 elsewhere.  ``d_blocks`` optionally gives a TSA block
    length per layer.  ``channel_multiplier`` scales every layer width (2 for
    joints+bones input).
    """

    channels: tuple[int, ...] = (64, 64, 64, 128, 128, 128, 256, 256, 256)
    in_channels: int = 3
    num_classes: int = 60
    topology: str | dict = "ntu25"
    T: int | None = None
    feature_layers: int = 3
    input_bn: bool = True
    partition: str = "spatial"
    kernel_size: int = 9
    heads: int = 8
    qk_ratio: float = 0.25
    value_ratio: float = 1.0
    drop_rate: float = 0.1
    strides: tuple[int, ...] | None = None
    d_blocks: tuple[int | None, ...] | None = None
    channel_multiplier: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        self.channels = tuple(self.channels)
        if self.strides is not None:
            self.strides = tuple(self.strides)
        if self.d_blocks is not None:
            self.d_blocks = tuple(self.d_blocks)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("channels", "strides", "d_blocks"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @property
    def V(self) -> int:
        return load_topology(self.topology).V

    def widths(self) -> list[int]:
        return [c * self.channel_multiplier for c in self.channels]

    def layer_strides(self) -> list[int]:
        if self.strides is not None:
            if len(self.strides) != len(self.channels):
                raise ConfigError("strides must have one entry per layer")
            return list(self.strides)
        widths = self.widths()
        return [2 if i > 0 and widths[i] > widths[i - 1] else 1 for i in range(len(widths))]

    def layer_specs(self, kind: str) -> list[LayerSpec]:
        if kind not in STREAM_KINDS:
            raise ConfigError(f"unknown stream kind {kind!r}; choose from {sorted(STREAM_KINDS)}")
        if not 0 <= self.feature_layers <= len(self.channels):
            raise ConfigError(f"feature_layers={self.feature_layers} exceeds layer count {len(self.channels)}")
        if self.d_blocks is not None and len(self.d_blocks) != len(self.channels):
            raise ConfigError("d_blocks must have one entry per layer")
        early, late = STREAM_KINDS[kind]
        widths, strides = self.widths(), self.layer_strides()
        specs, c_in = [], self.in_channels
        for i, (c_out, stride) in enumerate(zip(widths, strides)):
            sp, tp = early if i < self.feature_layers else late
            d_block = self.d_blocks[i] if self.d_blocks is not None else None
            specs.append(LayerSpec(sp, tp, c_in, c_out, stride, d_block))
            c_in = c_out
        return specs


def check_schedule(specs: Sequence[LayerSpec], in_channels: int) -> None:
    """Raise ConfigError unless every layer consumes its predecessor's width."""
    expected = in_channels
    for i, spec in enumerate(specs):
        spec.validate()
        if spec.c_in != expected:
            raise ConfigError(f"layer {i + 1} expects {spec.c_in} input channels but receives {expected}")
        expected = spec.c_out


class AugmentedGcn(_ResidualBlock):
    """Concatenation of a graph convolution (3/4 of C_out) and wide spatial attention (1/4)."""

    attention_cls = SpatialSelfAttention

    def __init__(self, c_in: int, c_out: int, A: np.ndarray, rng: np.random.Generator,
                 heads: int = 8, qk_ratio: float = 0.25, drop_rate: float = 0.1, **tail):
        if c_out % 4:
            raise ConfigError(f"augmented layer needs C_out divisible by 4, got {c_out}")
        self.c_att = c_out // 4
        self.c_conv = c_out - self.c_att
        self.conv = GcnLayer(c_in, self.c_conv, A, rng, use_bn=False, use_residual=False, use_activation=False)
        self.attention = self._make_attention(c_in, c_out, rng, heads, qk_ratio, drop_rate)
        self._setup_tail(c_in, c_out, rng, 1, tail.get("use_bn", True),
                         tail.get("use_residual", True), tail.get("use_activation", True))

    def _make_attention(self, c_in, c_out, rng, heads, qk_ratio, drop_rate, **kw) -> SelfAttention:
        # wide attention: half the heads, each twice as wide
        return self.attention_cls(c_in, self.c_att, rng, heads=max(1, heads // 2),
                                  d_qk=int(round(qk_ratio * c_out)), d_v=self.c_att,
                                  drop_rate=drop_rate, use_bn=False, use_residual=False,
                                  use_activation=False, **kw)

    def branches(self, x: Tensor) -> Tensor:
        return T.concat([self.conv.aggregate(x), self.attention.attend(x)], axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self._tail(self.branches(x), x)


class AugmentedTcn(AugmentedGcn):
    """Concatenation of a temporal convolution (3/4 of C_out) and wide temporal attention (1/4)."""

    attention_cls = TemporalSelfAttention

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel_size: int = 9,
                 stride: int = 1, heads: int = 8, qk_ratio: float = 0.25, drop_rate: float = 0.1,
                 d_block: int | None = None, **tail):
        if c_out % 4:
            raise ConfigError(f"augmented layer needs C_out divisible by 4, got {c_out}")
        self.c_att = c_out // 4
        self.c_conv = c_out - self.c_att
        self.stride = stride
        self.conv = TcnLayer(c_in, self.c_conv, rng, kernel_size, stride,
                             use_bn=False, use_residual=False, use_activation=False)
        self.attention = self._make_attention(c_in, c_out, rng, heads, qk_ratio, drop_rate, d_block=d_block)
        self._setup_tail(c_in, c_out, rng, stride, tail.get("use_bn", True),
                         tail.get("use_residual", True), tail.get("use_activation", True))

    def branches(self, x: Tensor) -> Tensor:
        att = self.attention.attend(x)
        if self.stride > 1:
            att = att[:, :, ::self.stride]
        return T.concat([self.conv.convolve(x), att], axis=1)


class StreamLayer(Module):
    """One spatial operator followed by one temporal operator."""

    def __init__(self, spec: LayerSpec, spatial: Module, temporal: Module):
        self.spec = spec
        self.spatial = spatial
        self.temporal = temporal

    def forward(self, x: Tensor) -> Tensor:
        return self.temporal(self.spatial(x))


def _make_spatial(spec: LayerSpec, cfg: NetworkConfig, A: np.ndarray, rng) -> Module:
    op = spec.spatial_op
    if op == "GCN":
        return GcnLayer(spec.c_in, spec.c_out, A, rng)
    if op == "GCN-fc":
        return GcnLayer(spec.c_in, spec.c_out, fully_connected_adjacency(A.shape[1]), rng)
    if op in ("AGCN", "AGCN-noA"):
        return AgcnLayer(spec.c_in, spec.c_out, A, rng, use_static=op == "AGCN")
    if op == "SSA":
        return SpatialSelfAttention(spec.c_in, spec.c_out, rng, heads=cfg.heads, qk_ratio=cfg.qk_ratio,
                                    value_ratio=cfg.value_ratio, drop_rate=cfg.drop_rate)
    return AugmentedGcn(spec.c_in, spec.c_out, A, rng, heads=cfg.heads, qk_ratio=cfg.qk_ratio,
                        drop_rate=cfg.drop_rate)


def _make_temporal(spec: LayerSpec, cfg: NetworkConfig, rng) -> Module:
    c, op = spec.c_out, spec.temporal_op
    if op == "TCN":
        return TcnLayer(c, c, rng, cfg.kernel_size, spec.stride)
    if op == "TSA":
        return TemporalSelfAttention(c, c, rng, heads=cfg.heads, qk_ratio=cfg.qk_ratio,
                                     value_ratio=cfg.value_ratio, drop_rate=cfg.drop_rate,
                                     stride=spec.stride, d_block=spec.d_block)
    return AugmentedTcn(c, c, rng, cfg.kernel_size, spec.stride, heads=cfg.heads, qk_ratio=cfg.qk_ratio,
                        drop_rate=cfg.drop_rate, d_block=spec.d_block)


class StreamModel(Module):
    """Input BN -> stacked layers -> global average pool -> linear classifier."""

    def __init__(self, config: NetworkConfig, kind: str, specs: list[LayerSpec] | None = None):
        self.config = config
        self.kind = kind
        topo = load_topology(config.topology)
        self.V = topo.V
        specs = specs if specs is not None else config.layer_specs(kind)
        check_schedule(specs, config.in_channels)
        rng = np.random.default_rng(config.seed)
        A = build_adjacency(topo, config.partition)
        self.input_bn = BatchNorm(config.in_channels * self.V) if config.input_bn else None
        self.layers = [StreamLayer(s, _make_spatial(s, config, A, rng), _make_temporal(s, config, rng))
                       for s in specs]
        self.classifier = Linear(specs[-1].c_out if specs else config.in_channels, config.num_classes, rng)
        self._capture = False

    # -- attention capture ---------------------------------------------
    def attention_layers(self) -> list[tuple[int, SelfAttention]]:
        out = []
        for i, layer in enumerate(self.layers):
            for m in layer.modules():
                if isinstance(m, SelfAttention):
                    out.append((i, m))
        return out

    @property
    def capture(self) -> bool:
        return self._capture

    @capture.setter
    def capture(self, flag: bool) -> None:
        self._capture = bool(flag)
        for _, m in self.attention_layers():
            m.capture = self._capture
            m.last_scores = None

    def has_adaptive_layers(self) -> bool:
        return any(isinstance(m, AgcnLayer) for m in self.modules())

    # -- forward --------------------------------------------------------
    def features(self, x: Tensor) -> Tensor:
        N, C, t, V = x.shape
        if self.input_bn is not None:
            x = self.input_bn(x.permute(0, 1, 3, 2).reshape(N, C * V, t))
            x = x.reshape(N, C, V, t).permute(0, 1, 3, 2)
        for layer in self.layers:
            x = layer(x)
        return x

    def forward(self, x) -> Tensor:
        """Class logits for ``x`` of shape (N, C, T, V) or (N, C, T, V, M).

        With a person axis M the persons run as independent samples and their
        logits are averaged.
        """
        x = T.as_tensor(x)
        cfg = self.config
        if x.ndim not in (4, 5) or x.shape[1] != cfg.in_channels or x.shape[3] != self.V:
            raise DimensionError(f"expected (N, {cfg.in_channels}, T, {self.V}[, M]) input, got {x.shape}")
        if cfg.T is not None and x.shape[2] != cfg.T:
            raise DimensionError(f"expected T={cfg.T} frames, got {x.shape[2]}")
        M = 1
        if x.ndim == 5:
            N, C, t, V, M = x.shape
            x = x.permute(0, 4, 1, 2, 3).reshape(N * M, C, t, V)
        h = self.features(x).mean(axis=(2, 3))
        logits = self.classifier(h)
        if M > 1:
            logits = logits.reshape(-1, M, cfg.num_classes).mean(axis=1)
        return logits


def build_stream(config: NetworkConfig, kind: str) -> StreamModel:
    return StreamModel(config, kind)


def temporal_extents(model: StreamModel, T_in: int) -> list[int]:
    """Frame count after every layer for an input of ``T_in`` frames."""
    out, t = [], T_in
    for layer in model.layers:
        t = (t - 1) // layer.spec.stride + 1
        out.append(t)
    return out


def fuse_streams(scores_s, scores_t) -> np.ndarray:
    """Sum of the two streams' softmax class scores."""
    a = np.asarray(scores_s.data if isinstance(scores_s, Tensor) else scores_s, dtype=np.float64)
    b = np.asarray(scores_t.data if isinstance(scores_t, Tensor) else scores_t, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cannot fuse scores of shapes {a.shape} and {b.shape}")
    return _softmax(a) + _softmax(b)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# parameter accounting


@dataclass
class ParameterReport:
    total: int
    breakdown: list[tuple[str, int]] = field(default_factory=list)


def count_parameters(model: Module) -> ParameterReport:
    """Exact learnable-scalar count with a per-component breakdown."""
    breakdown: list[tuple[str, int]] = []
    if isinstance(model, StreamModel):
        if model.input_bn is not None:
            breakdown.append(("input_bn", model.input_bn.num_parameters()))
        for i, layer in enumerate(model.layers, 1):
            s = layer.spec
            breakdown.append((f"layer{i}.spatial[{s.spatial_op} {s.c_in}->{s.c_out}]", layer.spatial.num_parameters()))
            breakdown.append((f"layer{i}.temporal[{s.temporal_op} s{s.stride}]", layer.temporal.num_parameters()))
        breakdown.append(("classifier", model.classifier.num_parameters()))
    else:
        for name, child in model.children():
            breakdown.append((name, child.num_parameters()))
        own = sum(p.data.size for n, p in model.named_parameters() if "." not in n)
        if own:
            breakdown.append(("(own)", own))
    total = model.num_parameters()
    return ParameterReport(total, breakdown)


def core_module(op: str, C: int, V: int = 25, K: int = 3, kernel_size: int = 9,
                heads: int = 8, qk_ratio: float = 0.25, value_ratio: float = 1.0) -> Module:
    """A bare C -> C operator (no BN, residual or activation) for complexity comparisons."""
    rng = np.random.default_rng(0)
    A = np.zeros((K, V, V))
    bare = dict(use_bn=False, use_residual=False, use_activation=False)
    if op == "GCN":
        return GcnLayer(C, C, A, rng, **bare)
    if op == "AGCN":
        return AgcnLayer(C, C, A, rng, **bare)
    if op == "TCN":
        return TcnLayer(C, C, rng, kernel_size, **bare)
    if op in ("SSA", "TSA"):
        cls = SpatialSelfAttention if op == "SSA" else TemporalSelfAttention
        return cls(C, C, rng, heads=heads, qk_ratio=qk_ratio, value_ratio=value_ratio, **bare)
    raise ConfigError(f"unknown operator {op!r}")


# ---------------------------------------------------------------------------
# attention maps


@dataclass
class AttentionMap:
    """Post-softmax scores of one attention layer for one sample.

    ``scores`` is (T, H, V, V) for spatial and (V, H, T, T) for temporal
    layers; ``averaged`` is the head- and fold-averaged square matrix.
    """

    layer: int
    axis: str
    scores: np.ndarray

    @property
    def averaged(self) -> np.ndarray:
        return self.scores.mean(axis=(0, 1))


def extract_attention_maps(model: StreamModel, sample) -> tuple[list[AttentionMap], np.ndarray | None]:
    """Run ``sample`` (C, T, V) or (C, T, V, M) through ``model`` and collect attention maps.

    Only the first person of a multi-person sample is used.  Returns the maps
    in layer order and the per-joint relevance (column sums of the last
    spatial map scaled to max 1), or None when the model has no spatial
    attention.
    """
    if not model.capture:
        raise ContractError("attention capture is disabled on this model")
    x = np.asarray(sample.data if isinstance(sample, Tensor) else sample)
    if x.ndim == 4:
        x = x[..., 0]
    was_training = model.training
    model.eval()
    try:
        with T.no_grad():
            model(Tensor(x[None].astype(T.get_default_dtype())))
    finally:
        model.train(was_training)
    maps = []
    for i, m in model.attention_layers():
        if m.last_scores is not None:
            maps.append(AttentionMap(i + 1, m.axis, m.last_scores[0]))
    spatial = [a for a in maps if a.axis == "spatial"]
    relevance = None
    if spatial:
        col = spatial[-1].averaged.sum(axis=0)
        relevance = col / col.max() if col.max() > 0 else col
    return maps, relevance
