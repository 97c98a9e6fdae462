"""Skeleton samples: bones, preprocessing, the SKEL file format and a synthetic generator."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .graph import SkeletonTopology, load_topology

SKEL_MAGIC = b"SKEL"
SKEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")  # magic, version, C, T, V, M, label


@dataclass
class SkeletonSample:
    """Coordinates (C, T, V, M) of one sequence and its class index."""

    coords: np.ndarray
    label: int
    sample_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float32)
        if self.coords.ndim != 4:
            raise DimensionError(f"coords must be (C, T, V, M), got {self.coords.shape}")
        if not np.isfinite(self.coords).all():
            raise FormatError(f"sample {self.sample_id!r} contains non-finite coordinates")


@dataclass
class DatasetManifest:
    V: int
    T_target: int
    topology: str
    classes: list[str]
    samples: list[dict]

    def to_json(self) -> dict:
        return {"V": self.V, "T_target": self.T_target, "topology": self.topology,
                "classes": list(self.classes), "samples": list(self.samples)}


# ---------------------------------------------------------------------------
# bones and preprocessing


def _coords(sample) -> np.ndarray:
    return sample.coords if isinstance(sample, SkeletonSample) else np.asarray(sample)


def compute_bones(sample, topology: SkeletonTopology) -> np.ndarray:
    """Bone vectors child - parent stored at the child joint; zero at the center joint.

    Parents are the neighbors one hop closer to the center, so bones point
    away from the center.  Only the first three channels are used.
    """
    x = _coords(sample)
    if x.shape[2] != topology.V:
        raise DimensionError(f"sample has V={x.shape[2]} joints, topology has {topology.V}")
    parent = topology.parents()
    bones = np.zeros((3,) + x.shape[1:], dtype=x.dtype)
    child = np.nonzero(parent >= 0)[0]
    bones[:, :, child] = x[:3, :, child] - x[:3, :, parent[child]]
    return bones


def concat_bones(joints: np.ndarray, bones: np.ndarray) -> np.ndarray:
    """Channel-wise concatenation, joints first."""
    joints, bones = np.asarray(joints), np.asarray(bones)
    if joints.shape[1:] != bones.shape[1:]:
        raise DimensionError(f"joint block {joints.shape} and bone block {bones.shape} differ in (T, V, M)")
    return np.concatenate([joints, bones], axis=0)


def resample_indices(T: int, T_target: int) -> np.ndarray:
    """Frame indices: loop padding when short, uniform-stride subsampling when long."""
    if T < 1:
        raise FormatError("empty sequence")
    if T_target < 1:
        raise ConfigError(f"T_target must be positive, got {T_target}")
    if T <= T_target:
        return np.arange(T_target) % T
    return (np.arange(T_target) * T) // T_target


def preprocess(sample, T_target: int, center: int, coord_channels: int | None = None) -> np.ndarray:
    """Resize to ``T_target`` frames and move frame 0's center joint (person 0) to the origin.

    Only the first ``coord_channels`` channels (default min(C, 3)) are
    translated, so a confidence channel is left alone.  Persons that are all
    zero (absent) stay zero.
    """
    x = _coords(sample)
    C, T, V, M = x.shape
    x = x[:, resample_indices(T, T_target)].copy()
    k = min(C, 3) if coord_channels is None else coord_channels
    origin = x[:k, 0, center, 0].copy()
    present = np.abs(x).reshape(C, T_target * V, M).max(axis=(0, 1)) > 0
    x[:k, :, :, present] -= origin[:, None, None, None]
    return x


# ---------------------------------------------------------------------------
# SKEL binary format


def write_sample(path: str | Path, sample: SkeletonSample) -> None:
    C, T, V, M = sample.coords.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SKEL_MAGIC, SKEL_VERSION, C, T, V, M, int(sample.label)))
        fh.write(np.ascontiguousarray(sample.coords, dtype="<f4").tobytes())


def read_sample(path: str | Path, sample_id: str | None = None) -> SkeletonSample:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, C, T, V, M, label = _HEADER.unpack_from(raw)
    if magic != SKEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SKEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n = C * T * V * M
    if len(raw) != _HEADER.size + 4 * n:
        raise FormatError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, expected {4 * n}")
    coords = np.frombuffer(raw, dtype="<f4", count=n, offset=_HEADER.size).reshape(C, T, V, M)
    return SkeletonSample(coords.astype(np.float32), int(label), sample_id or Path(path).stem)


def write_dataset(directory: str | Path, samples: Sequence[SkeletonSample], classes: Sequence[str],
                  topology: str = "ntu25", T_target: int | None = None) -> Path:
    """Write one ``.skel`` file per sample plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ConfigError("cannot write an empty dataset")
    V = samples[0].coords.shape[2]
    entries = []
    for i, s in enumerate(samples):
        if s.coords.shape[2] != V:
            raise DimensionError("all samples must share V")
        name = f"{s.sample_id or f'sample{i:05d}'}.skel"
        write_sample(directory / name, s)
        entries.append({"file": name, "label": int(s.label)})
    manifest = DatasetManifest(V, T_target or samples[0].coords.shape[1], topology, list(classes), entries)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest.to_json(), indent=1))
    return path


def read_dataset(manifest_path: str | Path) -> tuple[DatasetManifest, list[SkeletonSample]]:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        d = json.loads(manifest_path.read_text())
        manifest = DatasetManifest(int(d["V"]), int(d["T_target"]), d["topology"], list(d["classes"]), list(d["samples"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: invalid manifest ({exc})") from None
    samples = []
    for entry in manifest.samples:
        s = read_sample(manifest_path.parent / entry["file"])
        if s.coords.shape[2] != manifest.V:
            raise FormatError(f"{entry['file']}: V={s.coords.shape[2]} but manifest says {manifest.V}")
        if s.label != entry["label"]:
            raise FormatError(f"{entry['file']}: label {s.label} disagrees with manifest {entry['label']}")
        samples.append(s)
    return manifest, samples


def stack_samples(samples: Sequence[SkeletonSample], T_target: int, topology: SkeletonTopology,
                  bones: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Preprocess and batch samples into X (N, C, T, V, M) and labels y (N,)."""
    if not samples:
        raise ConfigError("empty dataset")
    xs = []
    for s in samples:
        x = preprocess(s, T_target, topology.center)
        if bones:
            x = concat_bones(x, compute_bones(x, topology))
        xs.append(x)
    return np.stack(xs).astype(np.float32), np.array([s.label for s in samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic motions on the NTU-25 body

# x: subject's left, y: up, z: towards the camera
NTU25_REST_POSE = np.array([
    [0.00, 0.00, 0.00], [0.00, 0.25, 0.00], [0.00, 0.60, 0.00], [0.00, 0.75, 0.00],
    [0.18, 0.50, 0.00], [0.20, 0.25, 0.00], [0.22, 0.02, 0.00], [0.22, -0.05, 0.00],
    [-0.18, 0.50, 0.00], [-0.20, 0.25, 0.00], [-0.22, 0.02, 0.00], [-0.22, -0.05, 0.00],
    [0.10, -0.05, 0.00], [0.10, -0.45, 0.00], [0.10, -0.85, 0.00], [0.10, -0.90, 0.08],
    [-0.10, -0.05, 0.00], [-0.10, -0.45, 0.00], [-0.10, -0.85, 0.00], [-0.10, -0.90, 0.08],
    [0.00, 0.50, 0.00], [0.22, -0.12, 0.00], [0.25, -0.05, 0.03], [-0.22, -0.12, 0.00],
    [-0.25, -0.05, 0.03],
])
_ARM = {"left": (4, [5, 6, 7, 21, 22]), "right": (8, [9, 10, 11, 23, 24])}
_LOWER = [13, 14, 15, 17, 18, 19]

ARCHETYPES = ("raise_one_arm", "raise_both_arms", "wave", "crouch")


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _rotate_arm(pose: np.ndarray, side: str, angle: np.ndarray, forearm: bool = False) -> None:
    """Abduct one arm by ``angle`` (radians, per frame) in the frontal plane, in place.

    With ``forearm`` the pivot is the elbow and only the joints below it move.
    """
    shoulder, chain = _ARM[side]
    if forearm:
        shoulder, chain = chain[0], chain[1:]
    sign = 1.0 if side == "left" else -1.0
    c, s = np.cos(sign * angle), np.sin(sign * angle)
    rel = pose[:, chain] - pose[:, [shoulder]]
    x, y = rel[..., 0], rel[..., 1]
    pose[:, chain, 0] = pose[:, [shoulder], 0] + c[:, None] * x - s[:, None] * y
    pose[:, chain, 1] = pose[:, [shoulder], 1] + s[:, None] * x + c[:, None] * y


def sample_archetype_params(name: str, T: int, rng: np.random.Generator) -> dict:
    """Random phase/amplitude parameters of one archetype instance."""
    if name not in ARCHETYPES:
        raise ConfigError(f"unknown motion archetype {name!r}; choose from {ARCHETYPES}")
    p = {
        "yaw": float(rng.uniform(-0.35, 0.35)),
        "scale": float(rng.uniform(0.9, 1.1)),
        "offset": rng.uniform(-0.5, 0.5, size=3).tolist(),
        "onset": float(rng.uniform(0.05, 0.35)),
        "duration": float(rng.uniform(0.15, 0.35)),
    }
    if name in ("raise_one_arm", "wave"):
        p["side"] = str(rng.choice(["left", "right"]))
    if name in ("raise_one_arm", "raise_both_arms", "wave"):
        p["amplitude"] = float(rng.uniform(np.radians(110), np.radians(160)))
    if name == "wave":
        p["swing"] = float(rng.uniform(np.radians(60), np.radians(90)))
        p["cycles"] = float(rng.uniform(1.5, 3.0))
        p["phase"] = float(rng.uniform(0, 2 * np.pi))
    if name == "crouch":
        p["depth"] = float(rng.uniform(0.2, 0.35))
    return p


def archetype_trajectory(name: str, T: int, params: dict) -> np.ndarray:
    """Noise-free joint trajectory (3, T, 25, 1) of an archetype instance."""
    if name not in ARCHETYPES:
        raise ConfigError(f"unknown motion archetype {name!r}; choose from {ARCHETYPES}")
    t = np.arange(T) / max(T - 1, 1)
    pose = np.repeat(NTU25_REST_POSE[None], T, axis=0)
    ramp = _smoothstep((t - params["onset"]) / params["duration"])
    if name == "raise_one_arm":
        _rotate_arm(pose, params["side"], params["amplitude"] * ramp)
    elif name == "raise_both_arms":
        _rotate_arm(pose, "left", params["amplitude"] * ramp)
        _rotate_arm(pose, "right", params["amplitude"] * ramp)
    elif name == "wave":
        # forearm swings about the elbow once the arm is up
        swing = params["swing"] * np.sin(2 * np.pi * params["cycles"] * t + params["phase"])
        _rotate_arm(pose, params["side"], ramp * swing, forearm=True)
        _rotate_arm(pose, params["side"], params["amplitude"] * ramp)
    elif name == "crouch":
        drop = params["depth"] * ramp
        upper = [j for j in range(25) if j not in _LOWER]
        pose[:, upper, 1] -= drop[:, None]
        for knee, ankle in ((13, 14), (17, 18)):
            pose[:, knee, 1] = 0.5 * (pose[:, knee - 1, 1] + pose[:, ankle, 1])
            pose[:, knee, 2] += 0.8 * drop
    yaw = params["yaw"]
    rot = np.array([[np.cos(yaw), 0.0, np.sin(yaw)], [0.0, 1.0, 0.0], [-np.sin(yaw), 0.0, np.cos(yaw)]])
    pose = params["scale"] * pose @ rot.T + np.asarray(params["offset"])
    return pose.transpose(2, 0, 1)[..., None]


def generate_synthetic(seed: int, classes: Sequence[str] = ARCHETYPES, n_per_class: int = 50,
                       V: int = 25, T: int = 32, noise: float = 0.05) -> list[SkeletonSample]:
    """Deterministic labelled motions; sample ``i`` draws from ``default_rng([seed, i])``."""
    if V != 25:
        raise ConfigError("synthetic motions are defined on the 25-joint NTU body")
    classes = list(classes)
    for name in classes:
        if name not in ARCHETYPES:
            raise ConfigError(f"unknown motion archetype {name!r}; choose from {ARCHETYPES}")
    samples = []
    for label, name in enumerate(classes):
        for j in range(n_per_class):
            index = label * n_per_class + j
            rng = np.random.default_rng([seed, index])
            params = sample_archetype_params(name, T, rng)
            coords = archetype_trajectory(name, T, params)
            if noise > 0:
                coords = coords + rng.normal(0.0, noise, size=coords.shape)
            samples.append(SkeletonSample(coords, label, f"{name}_{j:04d}", {"archetype": name, "params": params}))
    return samples


def train_test_split(samples: Sequence[SkeletonSample], n_test_per_class: int, seed: int = 0
                     ) -> tuple[list[SkeletonSample], list[SkeletonSample]]:
    """Hold out ``n_test_per_class`` samples of every class, chosen by a seeded shuffle."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    labels = sorted({s.label for s in samples})
    for c in labels:
        group = [s for s in samples if s.label == c]
        order = rng.permutation(len(group))
        test += [group[i] for i in order[:n_test_per_class]]
        train += [group[i] for i in order[n_test_per_class:]]
    return train, test


def topology_for(manifest: DatasetManifest) -> SkeletonTopology:
    return load_topology(manifest.topology)
