"""Skeleton topologies, partitioned adjacency and degree normalization."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ContractError, TopologyError

# NTU RGB+D, 25 Kinect v2 joints (0-based); joint 20 is the spine centre.
NTU25_EDGES = [
    (0, 1), (1, 20), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13),
    (15, 14), (16, 0), (17, 16), (18, 17), (19, 18), (21, 22), (22, 7),
    (23, 24), (24, 11),
]
NTU25_CENTER = 20

# Kinetics skeleton, 18 OpenPose joints; joint 1 is the neck.
KIN18_EDGES = [
    (4, 3), (3, 2), (7, 6), (6, 5), (13, 12), (12, 11), (10, 9), (9, 8),
    (11, 5), (8, 2), (5, 1), (2, 1), (0, 1), (15, 0), (14, 0), (17, 15),
    (16, 14),
]
KIN18_CENTER = 1


@dataclass(frozen=True)
class SkeletonTopology:
    V: int
    edges: tuple[tuple[int, int], ...]
    center: int
    name: str = "custom"

    def bone_adjacency(self) -> np.ndarray:
        """Symmetric 0/1 bone adjacency (no self loops)."""
        A = np.zeros((self.V, self.V))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def hop_distance(self) -> np.ndarray:
        """Breadth-first hop count of every joint from the center joint."""
        adj = [[] for _ in range(self.V)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        dist = np.full(self.V, -1, dtype=np.int64)
        dist[self.center] = 0
        queue = deque([self.center])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def parents(self) -> np.ndarray:
        """Neighbor one hop closer to the center for every joint (-1 for the center)."""
        dist = self.hop_distance()
        parent = np.full(self.V, -1, dtype=np.int64)
        for i, j in sorted(self.edges):
            if dist[j] == dist[i] - 1 and parent[i] < 0:
                parent[i] = j
            elif dist[i] == dist[j] - 1 and parent[j] < 0:
                parent[j] = i
        return parent

    def to_json(self) -> dict:
        return {"V": self.V, "edges": [list(e) for e in self.edges], "center": self.center}


def build_topology(V: int, edges, center: int, name: str = "custom") -> SkeletonTopology:
    """Validate and freeze a skeleton graph."""
    if V < 1:
        raise TopologyError(f"V must be positive, got {V}")
    if not 0 <= center < V:
        raise TopologyError(f"center {center} outside [0, {V})")
    clean = []
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < V and 0 <= j < V):
            raise TopologyError(f"edge ({i}, {j}) outside [0, {V})")
        if i == j:
            raise TopologyError(f"self-loop ({i}, {i}) in edge list")
        clean.append((i, j))
    topo = SkeletonTopology(V, tuple(clean), center, name)
    if (topo.hop_distance() < 0).any():
        raise TopologyError(f"skeleton graph with V={V} is disconnected")
    return topo


def ntu25() -> SkeletonTopology:
    return build_topology(25, NTU25_EDGES, NTU25_CENTER, "ntu25")


def kinetics18() -> SkeletonTopology:
    return build_topology(18, KIN18_EDGES, KIN18_CENTER, "kin18")


PRESETS = {"ntu25": ntu25, "kin18": kinetics18}


def load_topology(spec: str | dict) -> SkeletonTopology:
    """Preset name, path to a JSON file, or an already parsed JSON dict."""
    if isinstance(spec, dict):
        return build_topology(spec["V"], spec["edges"], spec["center"])
    if spec in PRESETS:
        return PRESETS[spec]()
    path = Path(spec)
    if not path.exists():
        raise TopologyError(f"unknown topology {spec!r}")
    return load_topology(json.loads(path.read_text()))


class PartitionStrategy(str, Enum):
    UNIFORM = "uniform"
    DISTANCE = "distance"
    SPATIAL = "spatial"

    @property
    def K(self) -> int:
        return {"uniform": 1, "distance": 2, "spatial": 3}[self.value]


def partition_adjacency(topology: SkeletonTopology, strategy: PartitionStrategy | str) -> np.ndarray:
    """Raw (un-normalized) partition matrices, shape (K, V, V), summing to A~ + I.

    Entry ``[k, i, j]`` carries joint i's features to joint j, matching the
    row-vector product ``f_out = f_in @ A_k``.  Under the spatial strategy the
    centripetal partition holds pairs whose target j is closer to the center
    than i, the centrifugal one pairs moving away from it; self links and
    equidistant pairs go to the root partition.
    """
    strategy = PartitionStrategy(strategy)
    V = topology.V
    A = topology.bone_adjacency()
    I = np.eye(V)
    if strategy is PartitionStrategy.UNIFORM:
        return (A + I)[None]
    if strategy is PartitionStrategy.DISTANCE:
        return np.stack([I, A])
    dist = topology.hop_distance()
    root, closer, farther = I.copy(), np.zeros((V, V)), np.zeros((V, V))
    for i, j in zip(*np.nonzero(A)):
        if dist[j] < dist[i]:
            closer[i, j] = 1.0
        elif dist[j] > dist[i]:
            farther[i, j] = 1.0
        else:
            root[i, j] = 1.0
    return np.stack([root, closer, farther])


def normalize_adjacency(raw: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization D^-1/2 raw D^-1/2 with D_ii the row sums.

    Rows whose degree is zero stay zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ContractError(f"adjacency must be square, got {raw.shape}")
    if (raw < 0).any():
        raise ContractError("adjacency entries must be non-negative")
    deg = raw.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = deg[nz] ** -0.5
    return inv[:, None] * raw * inv[None, :]


def build_adjacency(topology: SkeletonTopology, strategy: PartitionStrategy | str = "spatial") -> np.ndarray:
    """Normalized partition matrices A_k, shape (K, V, V)."""
    return np.stack([normalize_adjacency(a) for a in partition_adjacency(topology, strategy)])


def fully_connected_adjacency(V: int) -> np.ndarray:
    """Normalized all-ones adjacency, shape (1, V, V)."""
    return normalize_adjacency(np.ones((V, V)))[None]
