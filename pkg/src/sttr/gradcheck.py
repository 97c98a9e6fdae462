"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .tensor import Tensor


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = 40, seed: int = 0) -> float:
    """Largest relative error between backward() and central differences.

    ``f`` must rebuild its scalar output from ``params`` on every call and be
    deterministic.  For each parameter at most ``max_coords`` coordinates are
    probed (all of them when ``None``).  The error of one coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError("grad_check needs float64 tensors")
        p.grad = None

    with T.fresh_tape():
        loss = f()
        if loss.data.size != 1:
            raise ContractError("grad_check needs a scalar function")
        T.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    rng = np.random.default_rng(seed)
    worst = 0.0
    with T.no_grad():
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            n = flat.size
            coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                a = g.reshape(-1)[i]
                if not (np.isfinite(up) and np.isfinite(down) and np.isfinite(a)):
                    raise NumericError(f"non-finite value at coordinate {i} of a {p.shape} parameter")
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, float(err))
    return worst
