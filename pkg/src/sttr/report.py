"""Delimited and image outputs: attention maps, relevance, parameter tables, histories.

Matrices go to CSV (full precision) and binary 8-bit PGM.  PNG figures are
rendered with matplotlib's Agg backend when requested.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError
from .networks import (AttentionMap, NetworkConfig, build_stream, core_module,
                       count_parameters)

COMPARISON_KINDS = ("ST-GCN", "AGCN-1s", "S-TR", "T-TR", "ST-TR-1s")
SWEEP_OPS = ("GCN", "AGCN", "TCN", "SSA", "TSA")


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {matrix.shape}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in matrix:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: ragged or empty matrix")
    return np.array(rows)


def to_gray(matrix: np.ndarray) -> np.ndarray:
    """Scale a non-negative matrix so its maximum maps to 255 (all-zero stays 0)."""
    m = np.asarray(matrix, dtype=np.float64)
    if (m < 0).any() or not np.isfinite(m).all():
        raise FormatError("PGM export needs finite non-negative values")
    top = m.max()
    if top == 0:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.rint(m / top * 255.0).astype(np.uint8)


def write_pgm(path: str | Path, matrix: np.ndarray) -> None:
    """Binary P5 grayscale, row-major, maxval 255."""
    gray = to_gray(matrix)
    if gray.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {gray.shape}")
    H, W = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5 {W} {H} 255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    W, H, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    # header is followed by exactly one whitespace byte
    header_len = raw.index(parts[3]) + len(parts[3]) + 1
    body = raw[header_len:]
    if len(body) != W * H:
        raise FormatError(f"{path}: expected {W * H} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(H, W)


def write_relevance_csv(path: str | Path, relevance: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["joint", "score"])
        for j, s in enumerate(np.asarray(relevance, dtype=np.float64)):
            w.writerow([j, repr(float(s))])


def read_relevance_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["score"]) for r in rows])


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_attention_png(path: str | Path, amap: AttentionMap) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(amap.averaged, cmap="viridis", interpolation="nearest")
    label = "joint" if amap.axis == "spatial" else "frame"
    ax.set_title(f"layer {amap.layer} {amap.axis} attention")
    ax.set_xlabel(f"key {label}")
    ax.set_ylabel(f"query {label}")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def export_attention(maps: Sequence[AttentionMap], relevance: np.ndarray | None,
                     out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write every map as CSV + PGM (+ PNG) and the relevance CSV; return the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for amap in maps:
        stem = out / f"layer{amap.layer}_{amap.axis}"
        write_matrix_csv(stem.with_suffix(".csv"), amap.averaged)
        write_pgm(stem.with_suffix(".pgm"), amap.averaged)
        written += [stem.with_suffix(".csv"), stem.with_suffix(".pgm")]
        if figures:
            plot_attention_png(stem.with_suffix(".png"), amap)
            written.append(stem.with_suffix(".png"))
    if relevance is not None:
        write_relevance_csv(out / "relevance.csv", relevance)
        written.append(out / "relevance.csv")
    return written


def comparison_table(config: NetworkConfig, kinds: Iterable[str] = COMPARISON_KINDS) -> list[tuple[str, int]]:
    return [(kind, count_parameters(build_stream(config, kind)).total) for kind in kinds]


def channel_sweep(channels: Iterable[int] = (64, 128, 256, 512), V: int = 25, K: int = 3,
                  kernel_size: int = 9, heads: int = 8) -> list[dict]:
    """Core-module parameter counts per width C, plus the TCN-TSA gap."""
    rows = []
    for C in channels:
        row = {"C": C}
        for op in SWEEP_OPS:
            row[op] = core_module(op, C, V=V, K=K, kernel_size=kernel_size, heads=heads).num_parameters()
        row["TCN-TSA"] = row["TCN"] - row["TSA"]
        rows.append(row)
    return rows


def write_rows_csv(path: str | Path, rows: Sequence[dict]) -> None:
    if not rows:
        raise FormatError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def plot_sweep_png(path: str | Path, rows: Sequence[dict]) -> None:
    plt = _pyplot()
    Cs = [r["C"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for op in SWEEP_OPS:
        # SSA and TSA cores have equal counts; dash one so both stay visible
        ax.plot(Cs, [r[op] / 1e5 for r in rows], marker="o", label=op, linestyle="--" if op == "TSA" else "-")
    ax.set_xlabel("channels C")
    ax.set_ylabel("parameters (x1e5)")
    ax.set_xticks(Cs)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_history_csv(path: str | Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "loss", "top1"])
        for r in history:
            w.writerow([r.epoch, repr(float(r.lr)), repr(float(r.loss)), repr(float(r.top1))])
