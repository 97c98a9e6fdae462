import json

import numpy as np
import pytest

from sttr.errors import ContractError, TopologyError
from sttr.graph import (build_adjacency, build_topology, fully_connected_adjacency, kinetics18, load_topology,
                        normalize_adjacency, ntu25, partition_adjacency)


def test_two_joint_topology_is_valid():
    topo = build_topology(2, [(0, 1)], center=0)
    assert topo.V == 2 and topo.edges == ((0, 1),)


def test_disconnected_graph_rejected():
    with pytest.raises(TopologyError, match="disconnected"):
        build_topology(3, [(0, 1)], center=0)


@pytest.mark.parametrize("edges,center", [([(0, 5)], 0), ([(0, 1)], 4), ([(1, 1), (0, 1)], 0)])
def test_bad_indices_rejected(edges, center):
    with pytest.raises(TopologyError):
        build_topology(2, edges, center)


def test_ntu_preset():
    topo = ntu25()
    assert topo.V == 25 and len(topo.edges) == 24


def test_kinetics_preset():
    topo = kinetics18()
    assert topo.V == 18 and len(topo.edges) == 17


def test_load_topology_from_dict_and_file(tmp_path):
    desc = {"V": 3, "edges": [[0, 1], [1, 2]], "center": 1}
    p = tmp_path / "topo.json"
    p.write_text(json.dumps(desc))
    assert load_topology(desc).edges == load_topology(str(p)).edges == ((0, 1), (1, 2))
    with pytest.raises(TopologyError):
        load_topology("no-such-preset")


def test_uniform_two_joints():
    topo = build_topology(2, [(0, 1)], center=0)
    assert np.array_equal(partition_adjacency(topo, "uniform")[0], [[1, 1], [1, 1]])


def test_spatial_two_joints():
    topo = build_topology(2, [(0, 1)], center=0)
    root, centripetal, centrifugal = partition_adjacency(topo, "spatial")
    assert np.array_equal(root, np.eye(2))
    assert np.array_equal(centripetal, [[0, 0], [1, 0]])  # only (1, 0)
    assert np.array_equal(centrifugal, [[0, 1], [0, 0]])  # only (0, 1)


def test_distance_partition():
    topo = build_topology(3, [(0, 1), (1, 2)], center=1)
    I, A = partition_adjacency(topo, "distance")
    assert np.array_equal(I, np.eye(3)) and np.array_equal(A, topo.bone_adjacency())


def test_equidistant_pairs_go_to_root():
    # triangle: joints 1 and 2 are both one hop from the center
    topo = build_topology(3, [(0, 1), (0, 2), (1, 2)], center=0)
    root, _, _ = partition_adjacency(topo, "spatial")
    assert root[1, 2] == root[2, 1] == 1


@pytest.mark.parametrize("strategy", ["uniform", "distance", "spatial"])
@pytest.mark.parametrize("topo", [ntu25(), kinetics18()], ids=["ntu25", "kin18"])
def test_partitions_sum_to_adjacency_plus_identity(topo, strategy):
    parts = partition_adjacency(topo, strategy)
    assert np.array_equal(parts.sum(axis=0), topo.bone_adjacency() + np.eye(topo.V))


def test_normalize_identity():
    assert np.array_equal(normalize_adjacency([[1.0]]), [[1.0]])


def test_normalize_two_by_two():
    assert np.allclose(normalize_adjacency(np.ones((2, 2))), 0.5)


def test_normalize_zero_row():
    raw = np.array([[1.0, 0, 1], [0, 0, 0], [1, 0, 1]])
    out = normalize_adjacency(raw)
    assert np.all(np.isfinite(out)) and not out[1].any() and not out[:, 1].any()


def test_normalize_rejects_negative():
    with pytest.raises(ContractError):
        normalize_adjacency([[1.0, -1.0], [0.0, 1.0]])


def test_normalized_symmetric_and_spectrally_bounded():
    topo = ntu25()
    A = normalize_adjacency(topo.bone_adjacency() + np.eye(25))
    assert np.abs(A - A.T).max() < 1e-12
    # power iteration for the largest |eigenvalue|
    v = np.random.default_rng(0).normal(size=25)
    for _ in range(500):
        v = A @ v
        v /= np.linalg.norm(v)
    assert abs(v @ A @ v) <= 1 + 1e-9


def test_build_adjacency_shapes():
    assert build_adjacency(ntu25(), "spatial").shape == (3, 25, 25)
    assert fully_connected_adjacency(25).shape == (1, 25, 25)
    assert np.allclose(fully_connected_adjacency(4), 0.25)


def test_parents_point_towards_center():
    topo = ntu25()
    d, p = topo.hop_distance(), topo.parents()
    assert p[topo.center] == -1
    for j in range(25):
        if j != topo.center:
            assert d[p[j]] == d[j] - 1
