"""The 64-bit finite-difference suite run by ``sttr gradcheck``.

Each case builds fresh float64 tensors or layers from a fixed seed and returns
a scalar closure plus the tensors to probe.  Stochastic parts (DropAttention)
are disabled so the closures are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import SpatialSelfAttention, TemporalSelfAttention
from .conv import AgcnLayer, GcnLayer, TcnLayer
from .gradcheck import grad_check
from .graph import build_adjacency, build_topology
from .networks import AugmentedGcn, AugmentedTcn, NetworkConfig, StreamModel
from .nn import BatchNorm

TOLERANCE = 1e-6
GROUPS = ("tensor", "layers", "network")


@dataclass
class CaseResult:
    name: str
    group: str
    error: float
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.message and self.error < TOLERANCE


def _leaf(rng, *shape, positive=False) -> T.Tensor:
    data = rng.uniform(0.5, 1.5, shape) if positive else rng.normal(size=shape)
    return T.Tensor(data, requires_grad=True)


def _weighted(out: T.Tensor, rng) -> T.Tensor:
    # random projection so that every output coordinate matters
    w = T.Tensor(rng.normal(size=out.shape))
    return T.tsum(T.mul(out, w))


def _tensor_cases():
    r = np.random.default_rng

    def binary(fn, positive_b=False):
        def make():
            rng = r(1)
            a, b = _leaf(rng, 3, 4), _leaf(rng, 4, positive=positive_b)
            return (lambda: _weighted(fn(a, b), r(2))), [a, b]
        return make

    def unary(fn, *shape):
        def make():
            rng = r(3)
            x = _leaf(rng, *shape)
            return (lambda: _weighted(fn(x), r(4))), [x]
        return make

    def masked():
        rng = r(5)
        x = _leaf(rng, 3, 5)
        mask = rng.random((3, 5)) < 0.4
        return (lambda: _weighted(T.masked_fill(x, mask, 0.0), r(6))), [x]

    def matmul():
        rng = r(7)
        a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
        return (lambda: _weighted(T.matmul(a, b), r(8))), [a, b]

    def einsum():
        rng = r(9)
        w, x = _leaf(rng, 5, 3), _leaf(rng, 2, 3, 4, 6)
        return (lambda: _weighted(T.einsum("oc,nctv->notv", w, x), r(10))), [w, x]

    def conv():
        rng = r(11)
        x, w = _leaf(rng, 2, 3, 7, 4), _leaf(rng, 5, 3, 3, 1)
        return (lambda: _weighted(T.conv2d_time(x, w, stride=2), r(12))), [x, w]

    def bn_train():
        rng = r(13)
        x = _leaf(rng, 4, 3, 5, 2)
        g, b = _leaf(rng, 3, positive=True), _leaf(rng, 3)
        def f():
            return _weighted(T.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True), r(14))
        return f, [x, g, b]

    def bn_eval():
        rng = r(15)
        x = _leaf(rng, 2, 3, 4, 2)
        g, b = _leaf(rng, 3, positive=True), _leaf(rng, 3)
        mean, var = rng.normal(size=3), rng.uniform(0.5, 2.0, 3)
        def f():
            return _weighted(T.batch_norm(x, g, b, mean.copy(), var.copy(), training=False), r(16))
        return f, [x, g, b]

    def xent():
        rng = r(17)
        z = _leaf(rng, 5, 4)
        y = rng.integers(0, 4, 5)
        return (lambda: T.cross_entropy(z, y)), [z]

    def concat():
        rng = r(18)
        a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
        return (lambda: _weighted(T.concat([a, b], axis=1), r(19))), [a, b]

    return {
        "add": binary(T.add),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "div": binary(T.div, positive_b=True),
        "scale": unary(lambda x: T.scale(x, 0.7), 3, 4),
        "relu": unary(lambda x: T.relu(T.add(x, 0.05)), 4, 5),
        "masked_fill": masked,
        "sum": unary(lambda x: T.mul(T.tsum(x, axis=1), T.tsum(x, axis=1)), 3, 4),
        "mean": unary(lambda x: T.mul(T.mean(x, axis=(0, 2)), 2.0), 2, 3, 4),
        "reshape_permute": unary(lambda x: T.permute(T.reshape(x, (3, 2, 4)), (2, 0, 1)), 6, 4),
        "getitem": unary(lambda x: x[:, ::2], 3, 5),
        "concat": concat,
        "matmul": matmul,
        "einsum": einsum,
        "softmax": unary(lambda x: T.softmax(x, axis=-1), 3, 5),
        "conv2d_time": conv,
        "batch_norm_train": bn_train,
        "batch_norm_eval": bn_eval,
        "cross_entropy": xent,
    }


def _topology():
    return build_topology(5, [(0, 1), (1, 2), (1, 3), (3, 4)], center=1, name="chain5")


def _layer_case(build, shape=(2, 4, 6, 5), seed=21):
    def make():
        rng = np.random.default_rng(seed)
        layer = build(rng)
        layer.train()
        x = _leaf(rng, *shape)
        proj = np.random.default_rng(seed + 1)
        out_w = {}

        def f():
            out = layer(x)
            if "w" not in out_w:
                out_w["w"] = proj.normal(size=out.shape)
            return T.tsum(T.mul(out, T.Tensor(out_w["w"])))
        return f, [x] + layer.parameters()
    return make


def _layers_cases():
    A = build_adjacency(_topology(), "spatial")
    att = dict(heads=2, drop_rate=0.0)
    return {
        "GCN": _layer_case(lambda rng: GcnLayer(4, 6, A, rng)),
        "AGCN": _layer_case(lambda rng: _perturb_b(AgcnLayer(4, 6, A, rng), rng)),
        "TCN": _layer_case(lambda rng: TcnLayer(4, 8, rng, kernel_size=3, stride=2)),
        "BatchNorm": _layer_case(lambda rng: BatchNorm(4)),
        "SSA": _layer_case(lambda rng: SpatialSelfAttention(4, 8, rng, **att)),
        "TSA": _layer_case(lambda rng: TemporalSelfAttention(4, 8, rng, stride=2, **att)),
        "TSA-block": _layer_case(lambda rng: TemporalSelfAttention(4, 8, rng, d_block=4, **att)),
        "AUG-GCN": _layer_case(lambda rng: AugmentedGcn(4, 8, A, rng, heads=4, drop_rate=0.0)),
        "AUG-TCN": _layer_case(lambda rng: AugmentedTcn(4, 8, rng, kernel_size=3, stride=2, heads=4,
                                                        drop_rate=0.0)),
    }


def _perturb_b(layer: AgcnLayer, rng) -> AgcnLayer:
    # B starts at zero; move it off zero so its gradient is probed at a generic point
    layer.B.data = rng.normal(scale=0.1, size=layer.B.shape)
    return layer


def _network_case(kind: str):
    def make():
        cfg = NetworkConfig(channels=(4, 8), num_classes=3, topology=_topology().to_json(), feature_layers=1,
                            heads=2, drop_rate=0.0, kernel_size=3, seed=31)
        model = StreamModel(cfg, kind)
        rng = np.random.default_rng(32)
        x = T.Tensor(rng.normal(size=(3, 3, 6, 5)))
        y = np.array([0, 1, 2])
        return (lambda: T.cross_entropy(model(x), y)), model.parameters()
    return make


def _network_cases():
    return {f"network[{k}]": _network_case(k) for k in ("S-TR", "T-TR", "AGCN-1s")}


def cases(group: str = "all") -> dict[str, tuple[str, Callable]]:
    table = {"tensor": _tensor_cases, "layers": _layers_cases, "network": _network_cases}
    groups = GROUPS if group == "all" else (group,)
    out = {}
    for g in groups:
        for name, make in table[g]().items():
            out[name] = (g, make)
    return out


def run_suite(group: str = "all", eps: float = 1e-5, max_coords: int = 12) -> list[CaseResult]:
    """Run every case of ``group`` in float64; failures are reported, not raised."""
    results = []
    with T.default_dtype(np.float64):
        for name, (g, make) in cases(group).items():
            try:
                f, params = make()
                err = grad_check(f, params, eps=eps, max_coords=max_coords)
                results.append(CaseResult(name, g, err))
            except Exception as exc:  # a crashing rule is a failed check, not a crashed suite
                results.append(CaseResult(name, g, float("inf"), f"{type(exc).__name__}: {exc}"))
    return results
