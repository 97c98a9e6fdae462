"""Versioned binary checkpoints of learnable tensors and batch-norm statistics.

Layout (little endian): ``b"STTR"``, version u32, tensor count u32, then per
tensor: name length u32, UTF-8 name, rank u32, extents u64 x rank, float32
payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .nn import Module

MAGIC = b"STTR"
VERSION = 1


def save_checkpoint(model: Module, path: str | Path) -> None:
    state = model.state_dict()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a checkpoint file into ``{name: float32 array}``."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = raw[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return state


def load_checkpoint(model: Module, path: str | Path) -> None:
    """Restore every parameter and buffer of ``model``; nothing is modified on error."""
    state = read_checkpoint(path)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = {**{k: p.data for k, p in params.items()}, **buffers}
    missing = [k for k in expected if k not in state]
    unexpected = [k for k in state if k not in expected]
    if missing or unexpected:
        raise CheckpointError(f"checkpoint does not match model: missing {missing[:5]}, unexpected {unexpected[:5]}")
    for name, arr in expected.items():
        if state[name].shape != arr.shape:
            raise CheckpointError(f"shape mismatch at {name}: checkpoint {state[name].shape}, model {arr.shape}")
    for name, p in params.items():
        p.data = state[name].astype(p.data.dtype)
    for name, buf in buffers.items():
        buf[...] = state[name]
