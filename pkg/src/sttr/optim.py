"""SGD with momentum and the step learning-rate schedule."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, velocity: list[np.ndarray] | None = None) -> list[np.ndarray]:
    """Update ``params`` in place and return the new velocity buffers.

    v <- momentum * v + grad + weight_decay * theta;  theta <- theta - lr * v
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    out = []
    for p, g, v in zip(params, grads, velocity):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v = momentum * v + g + weight_decay * p.data
        p.data -= (lr * v).astype(p.data.dtype)
        out.append(v)
    return out


class SGD:
    """Stateful wrapper around :func:`sgd_step`."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad for p in self.params]
        self.velocity = sgd_step(self.params, grads, self.lr if lr is None else lr,
                                 self.momentum, self.weight_decay, self.velocity)


def learning_rate(epoch: int, base_lr: float, drop_epochs: Sequence[int] = (60, 90),
                  factor: float = 0.1, warmup: bool = False, progress: float = 1.0) -> float:
    """Learning rate during ``epoch`` (0-based).

    The rate is ``base_lr * factor**k`` with ``k`` the number of drop epochs
    already reached.  With ``warmup`` the first epoch ramps linearly, giving
    ``base_lr * progress`` at fraction ``progress`` of the epoch.
    """
    if any(b <= a for a, b in zip(drop_epochs, drop_epochs[1:])):
        raise ConfigError(f"drop epochs must be strictly increasing, got {list(drop_epochs)}")
    drops = sum(1 for d in drop_epochs if epoch >= d)
    # divide by the integer reciprocal so 0.1 -> 0.01 -> 0.001 hold exactly
    lr = base_lr / round(1.0 / factor) ** drops if float(1.0 / factor).is_integer() else base_lr * factor ** drops
    if warmup and epoch == 0:
        lr *= min(max(progress, 0.0), 1.0)
    return lr
