"""Training loop, evaluation metrics and two-stream scoring."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .networks import StreamModel, fuse_streams
from .optim import SGD, learning_rate

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 32
    base_lr: float = 0.1
    lr_drop_epochs: tuple[int, ...] = (60, 90)
    momentum: float = 0.9
    weight_decay: float = 0.0
    warmup: bool | None = None  # None: warm up iff the model has adaptive graph layers
    seed: int = 0

    def __post_init__(self) -> None:
        self.lr_drop_epochs = tuple(self.lr_drop_epochs)
        if any(b <= a for a, b in zip(self.lr_drop_epochs, self.lr_drop_epochs[1:])):
            raise ConfigError(f"LR drop epochs must be strictly increasing, got {list(self.lr_drop_epochs)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_drop_epochs"] = list(self.lr_drop_epochs)
        return d


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    top1: float
    step_lrs: list[float] = field(default_factory=list, repr=False)


def train(model: StreamModel, X: np.ndarray, y: np.ndarray, config: TrainConfig) -> list[EpochRecord]:
    """Fit one stream with momentum SGD and cross-entropy.

    ``X`` is (N, C, T, V[, M]).  The recorded ``lr`` of an epoch is the rate
    used by its last step.  Deterministic for a fixed ``config.seed`` and
    model seed.
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ConfigError("cannot train on an empty dataset")
    dtype = T.get_default_dtype()
    warmup = model.has_adaptive_layers() if config.warmup is None else config.warmup
    opt = SGD(model.parameters(), config.base_lr, config.momentum, config.weight_decay)
    rng = np.random.default_rng(config.seed)
    n = len(X)
    steps = (n + config.batch_size - 1) // config.batch_size
    history = []
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total_loss, correct, lrs = 0.0, 0, []
        for step in range(steps):
            idx = order[step * config.batch_size:(step + 1) * config.batch_size]
            lr = learning_rate(epoch, config.base_lr, config.lr_drop_epochs, warmup=warmup,
                               progress=(step + 1) / steps)
            opt.zero_grad()
            with T.fresh_tape():
                logits = model(T.Tensor(X[idx].astype(dtype)))
                loss = T.cross_entropy(logits, y[idx])
                T.backward(loss)
            opt.step(lr)
            lrs.append(lr)
            total_loss += loss.item() * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == y[idx]).sum())
        rec = EpochRecord(epoch, lrs[-1], total_loss / n, correct / n, lrs)
        log.info("epoch %d lr %.5g loss %.4f top1 %.3f", epoch, rec.lr, rec.loss, rec.top1)
        history.append(rec)
    return history


def predict_logits(model: StreamModel, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits for every sample, shape (N, classes)."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with T.no_grad():
            for s in range(0, len(X), batch_size):
                out.append(model(T.Tensor(np.asarray(X[s:s + batch_size]).astype(T.get_default_dtype()))).data)
    finally:
        model.train(was_training)
    return np.concatenate(out).astype(np.float64)


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label ranks among the top ``k`` scores.

    Ties rank the lower class index first, so constant scores predict class 0.
    ``k`` is capped at the class count.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    k = min(k, scores.shape[1])
    target = scores[np.arange(len(labels)), labels][:, None]
    cls = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target) | ((scores == target) & (cls < labels[:, None]))
    return float((ahead.sum(axis=1) < k).mean())


def evaluate(models: StreamModel | Sequence[StreamModel], X: np.ndarray, y: np.ndarray) -> dict:
    """Top-1/top-5 of every stream and, for several streams, of their fused softmax scores."""
    if isinstance(models, StreamModel):
        models = [models]
    result = {}
    all_logits = []
    for i, m in enumerate(models):
        logits = predict_logits(m, X)
        all_logits.append(logits)
        result[f"stream{i}"] = {"top1": topk_accuracy(logits, y, 1), "top5": topk_accuracy(logits, y, 5)}
    if len(models) > 1:
        fused = fuse_streams(all_logits[0], all_logits[1])
        for extra in all_logits[2:]:
            fused = fused + fuse_streams(extra, extra) / 2
        result["fused"] = {"top1": topk_accuracy(fused, y, 1), "top5": topk_accuracy(fused, y, 5)}
    return result
