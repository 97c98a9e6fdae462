import numpy as np
import pytest

from sttr import tensor as T
from sttr.conv import AgcnLayer, GcnLayer, TcnLayer
from sttr.errors import ConfigError, ContractError, DimensionError
from sttr.gradcheck import grad_check
from sttr.graph import build_adjacency, build_topology, ntu25
from sttr.networks import count_parameters
from sttr.tensor import Tensor

BARE = dict(use_bn=False, use_residual=False, use_activation=False)


def chain5():
    return build_topology(5, [(0, 1), (1, 2), (1, 3), (3, 4)], center=1)


def gcn_loop_oracle(x, W, A):
    """sum_k (f_in A_k) W_k frame by frame; W is the fused (K*C_out, C_in) map."""
    N, C, t, V = x.shape
    K = A.shape[0]
    Wk = W.reshape(K, -1, C)
    out = np.zeros((N, Wk.shape[1], t, V))
    for n in range(N):
        for f in range(t):
            frame = x[n, :, f, :].T  # (V, C): one row per joint
            for k in range(K):
                out[n, :, f, :] += (A[k].T @ frame @ Wk[k].T).T
    return out


def test_gcn_identity_adjacency_is_per_node_linear_map(f64, rng):
    layer = GcnLayer(3, 4, np.eye(5)[None], rng, **BARE)
    x = rng.normal(size=(2, 3, 4, 5))
    want = np.einsum("oc,nctv->notv", layer.conv.weight.data, x)
    assert np.allclose(layer(Tensor(x)).data, want, atol=1e-12)


def test_gcn_mean_adjacency(f64, rng):
    layer = GcnLayer(1, 1, np.full((1, 2, 2), 0.5), rng, **BARE)
    layer.conv.weight.data = np.ones((1, 1))
    x = np.array([1.0, 3.0]).reshape(1, 1, 1, 2)
    assert np.allclose(layer(Tensor(x)).data.reshape(-1), [2.0, 2.0])


def test_gcn_matches_frame_loop_oracle(f64, rng):
    A = rng.uniform(size=(3, 5, 5))
    layer = GcnLayer(3, 4, A, rng, **BARE)
    x = rng.normal(size=(2, 3, 4, 5))
    want = gcn_loop_oracle(x, layer.conv.weight.data, A)
    assert np.abs(layer(Tensor(x)).data - want).max() < 1e-9


def test_gcn_joint_mismatch(rng):
    layer = GcnLayer(3, 4, build_adjacency(chain5()), rng)
    with pytest.raises(DimensionError):
        layer(Tensor(np.ones((1, 3, 4, 6))))


def test_gcn_equivariant_under_conjugated_adjacency(f64, rng):
    A = build_adjacency(chain5())
    perm = rng.permutation(5)
    P = np.eye(5)[perm]  # row i picks joint perm[i]
    layer = GcnLayer(3, 4, A, np.random.default_rng(0), **BARE)
    permuted = GcnLayer(3, 4, np.stack([P @ a @ P.T for a in A]), np.random.default_rng(0), **BARE)
    x = rng.normal(size=(2, 3, 4, 5))
    y = layer(Tensor(x)).data
    y_perm = permuted(Tensor(x[..., perm])).data
    assert np.abs(y_perm - y[..., perm]).max() < 1e-9


def test_agcn_reduces_to_gcn(f64, rng):
    A = build_adjacency(chain5())
    gcn = GcnLayer(3, 4, A, np.random.default_rng(7), **BARE)
    agcn = AgcnLayer(3, 4, A, np.random.default_rng(7), use_similarity=False, **BARE)
    x = rng.normal(size=(2, 3, 4, 5))
    assert np.abs(agcn(Tensor(x)).data - gcn(Tensor(x)).data).max() <= 1e-9


def test_agcn_similarity_is_row_stochastic(f64, rng):
    layer = AgcnLayer(3, 8, build_adjacency(chain5()), rng)
    C = layer.similarity(Tensor(rng.normal(size=(2, 3, 4, 5)))).data
    assert C.shape == (2, 3, 5, 5) and np.abs(C.sum(axis=-1) - 1).max() < 1e-6


def test_agcn_without_static_adjacency_differs(f64, rng):
    A = build_adjacency(chain5())
    full = AgcnLayer(3, 4, A, np.random.default_rng(3), **BARE)
    no_a = AgcnLayer(3, 4, A, np.random.default_rng(3), use_static=False, **BARE)
    x = Tensor(rng.normal(size=(1, 3, 4, 5)))
    out = no_a(x).data
    assert np.all(np.isfinite(out)) and not np.allclose(out, full(x).data)


def test_agcn_parameter_count(rng):
    K, V, c_in, c_out = 3, 25, 16, 32
    layer = AgcnLayer(c_in, c_out, build_adjacency(ntu25()), rng, **BARE)
    ce = c_out // 4
    assert layer.num_parameters() == K * c_in * c_out + K * V * V + 2 * K * c_in * ce


def test_gcn_parameter_count_with_tail(rng):
    layer = GcnLayer(16, 32, build_adjacency(ntu25()), rng)
    # fused maps + BN + projection shortcut (1x1 map and its BN)
    assert layer.num_parameters() == 3 * 16 * 32 + 2 * 32 + 16 * 32 + 2 * 32
    assert count_parameters(layer).total == layer.num_parameters()


def test_tcn_unit_kernel_is_identity(f64, rng):
    layer = TcnLayer(3, 3, rng, kernel_size=1, **BARE)
    layer.weight.data = np.eye(3).reshape(3, 3, 1, 1)
    x = rng.normal(size=(2, 3, 5, 4))
    assert np.array_equal(layer(Tensor(x)).data, x)


def test_tcn_stride_halves_300_frames(rng):
    layer = TcnLayer(2, 2, rng, kernel_size=9, stride=2)
    assert layer(Tensor(np.ones((1, 2, 300, 3)))).shape == (1, 2, 150, 3)


def test_tcn_matches_dense_oracle(f64, rng):
    layer = TcnLayer(3, 4, rng, kernel_size=5, stride=2, **BARE)
    x = rng.normal(size=(2, 3, 9, 2))
    w = layer.weight.data[..., 0]
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (0, 0)))
    got = layer(Tensor(x)).data
    want = np.zeros_like(got)
    for n in range(2):
        for o in range(4):
            for t in range(got.shape[2]):
                for v in range(2):
                    want[n, o, t, v] = sum(w[o, c, k] * xp[n, c, 2 * t + k, v] for c in range(3) for k in range(5))
    assert np.abs(got - want).max() < 1e-9


def test_tcn_parameter_count(rng):
    assert TcnLayer(8, 8, rng, kernel_size=9, **BARE).num_parameters() == 8 * 8 * 9


def test_tcn_rejects_even_kernel(rng):
    with pytest.raises(ConfigError):
        TcnLayer(2, 2, rng, kernel_size=4)


def test_tcn_degenerate_output(rng):
    layer = TcnLayer(2, 2, rng, kernel_size=9, stride=1, **BARE)
    with pytest.raises(ContractError):
        T.conv2d_time(np.ones((1, 2, 2, 1)), layer.weight.data, pad=0)


@pytest.mark.parametrize("make", [
    lambda A, rng: GcnLayer(3, 4, A, rng),
    lambda A, rng: AgcnLayer(3, 4, A, rng),
    lambda A, rng: TcnLayer(3, 4, rng, kernel_size=3, stride=2),
], ids=["gcn", "agcn", "tcn"])
def test_layer_gradients(f64, make):
    rng = np.random.default_rng(5)
    layer = make(build_adjacency(chain5()), rng)
    if isinstance(layer, AgcnLayer):
        layer.B.data = rng.normal(scale=0.1, size=layer.B.shape)
    x = Tensor(rng.normal(size=(2, 3, 6, 5)), requires_grad=True)
    w = rng.normal(size=layer(x).shape)
    def f():
        return T.tsum(T.mul(layer(x), w))
    assert grad_check(f, [x] + layer.parameters(), max_coords=15) < 1e-6


def test_agcn_gradient_reaches_b_theta_phi(f64, rng):
    layer = AgcnLayer(3, 4, build_adjacency(chain5()), rng)
    x = Tensor(rng.normal(size=(2, 3, 6, 5)))
    with T.fresh_tape():
        T.tsum(T.mul(layer(x), rng.normal(size=(2, 4, 6, 5)))).backward()
    for p in (layer.B, layer.theta.weight, layer.phi.weight):
        assert np.abs(p.grad).max() > 0
