"""Dense tensors with a reverse-mode differentiation tape.

Every differentiable primitive is a :class:`Function` subclass with a static
``forward`` working on NumPy arrays and a static ``backward`` mapping the
output gradient to one gradient per input.  Executed functions are appended
to the active :class:`Tape`; :meth:`Tape.backward` replays it in reverse.

A tape may be replayed once.  Calling ``backward`` again on a consumed tape
raises :class:`~sttr.errors.ContractError`; ops executed afterwards are
recorded on a fresh tape.
"""
from __future__ import annotations

import contextlib
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

_default_dtype: type = np.float32
_grad_enabled = True
_active_tape: "Tape | None" = None


def get_default_dtype() -> type:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    """Select the storage precision for newly created tensors (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    __slots__ = ("fn", "ctx", "inputs", "output")

    def __init__(self, fn, ctx, inputs, output):
        self.fn = fn
        self.ctx = ctx
        self.inputs = inputs
        self.output = output


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
        if self.consumed:
            raise ContractError("tape already consumed by a previous backward(); call reset() first")
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            for inp in node.inputs:
                if inp.requires_grad and inp.is_leaf:
                    leaves[id(inp)] = inp
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.fn.backward(node.ctx, g)
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                ig = _unbroadcast(np.asarray(ig), inp.data.shape)
                key = id(inp)
                grads[key] = grads[key] + ig if key in grads else ig

        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            g = g.astype(leaf.data.dtype, copy=False)
            leaf.grad = g if leaf.grad is None else leaf.grad + g

        self.nodes = []
        self.consumed = True


def current_tape() -> Tape:
    global _active_tape
    if _active_tape is None or _active_tape.consumed:
        _active_tape = Tape()
    return _active_tape


@contextlib.contextmanager
def fresh_tape() -> Iterator[Tape]:
    """Record the block on a new tape, restoring the previous one afterwards."""
    global _active_tape
    previous = _active_tape
    _active_tape = Tape()
    try:
        yield _active_tape
    finally:
        _active_tape = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-dimensional float array that can take part in differentiation."""

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or (data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _default_dtype))
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(n < 1 for n in arr.shape):
            raise DimensionError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self._tape: Tape | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self) -> None:
        if self._tape is None:
            raise ContractError("tensor was not produced by a recorded operation")
        self._tape.backward(self)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return GetItem.apply(self, index=index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def relu(self):
        return relu(self)


def as_tensor(x: Any) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_default_dtype))


class Context:
    """Scratch space a Function uses to pass values from forward to backward."""

    def save(self, **kwargs) -> None:
        self.__dict__.update(kwargs)


class Function:
    """Base class of differentiable primitives."""

    @staticmethod
    def forward(ctx: Context, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(t) for t in inputs)
        ctx = Context()
        out_data = cls.forward(ctx, *(t.data for t in tensors), **kwargs)
        out = Tensor(out_data, dtype=out_data.dtype)
        if _grad_enabled and any(t.requires_grad for t in tensors):
            tape = current_tape()
            out.requires_grad = True
            out.is_leaf = False
            out._tape = tape
            tape.nodes.append(_Node(cls, ctx, tensors, out))
        return out


# ---------------------------------------------------------------------------
# elementwise arithmetic


class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        return np.add(a, b)

    @staticmethod
    def backward(ctx, grad):
        return grad, grad


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        return np.subtract(a, b)

    @staticmethod
    def backward(ctx, grad):
        return grad, -grad


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a=a, b=b)
        return np.multiply(a, b)

    @staticmethod
    def backward(ctx, grad):
        return grad * ctx.b, grad * ctx.a


class Div(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a=a, b=b)
        return np.divide(a, b)

    @staticmethod
    def backward(ctx, grad):
        return grad / ctx.b, -grad * ctx.a / (ctx.b * ctx.b)


class Scale(Function):
    @staticmethod
    def forward(ctx, x, c=1.0):
        ctx.save(c=c)
        return x * x.dtype.type(c)

    @staticmethod
    def backward(ctx, grad):
        return grad * grad.dtype.type(ctx.c)


class ReLU(Function):
    @staticmethod
    def forward(ctx, x):
        mask = x > 0
        ctx.save(mask=mask)
        return np.where(mask, x, x.dtype.type(0))

    @staticmethod
    def backward(ctx, grad):
        return np.where(ctx.mask, grad, grad.dtype.type(0))


class MaskedFill(Function):
    @staticmethod
    def forward(ctx, x, mask=None, value=0.0):
        mask = np.broadcast_to(mask, x.shape)
        ctx.save(mask=mask)
        return np.where(mask, x.dtype.type(value), x)

    @staticmethod
    def backward(ctx, grad):
        return np.where(ctx.mask, grad.dtype.type(0), grad)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    return Div.apply(a, b)


def scale(x, c: float) -> Tensor:
    return Scale.apply(x, c=float(c))


def relu(x) -> Tensor:
    return ReLU.apply(x)


def masked_fill(x, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``; those entries get zero gradient."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_to(mask, x.shape)
    except ValueError:
        raise DimensionError(f"masked_fill: mask {mask.shape} does not broadcast to {x.shape}") from None
    return MaskedFill.apply(x, mask=mask, value=value)


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise IndexError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


class Sum(Function):
    @staticmethod
    def forward(ctx, x, axis=(), keepdims=False):
        ctx.save(shape=x.shape, axis=axis, keepdims=keepdims)
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, grad):
        if not ctx.keepdims:
            grad = np.expand_dims(grad, ctx.axis)
        return np.broadcast_to(grad, ctx.shape).copy()


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    return Sum.apply(x, axis=_normalize_axes(axis, x.ndim), keepdims=keepdims)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(Sum.apply(x, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# shape manipulation


class Reshape(Function):
    @staticmethod
    def forward(ctx, x, shape=()):
        ctx.save(shape=x.shape)
        return x.reshape(shape)

    @staticmethod
    def backward(ctx, grad):
        return grad.reshape(ctx.shape)


class Permute(Function):
    @staticmethod
    def forward(ctx, x, axes=()):
        ctx.save(inverse=tuple(np.argsort(axes)))
        return np.ascontiguousarray(x.transpose(axes))

    @staticmethod
    def backward(ctx, grad):
        return grad.transpose(ctx.inverse)


class Concat(Function):
    @staticmethod
    def forward(ctx, *xs, axis=0):
        ctx.save(axis=axis, sizes=[x.shape[axis] for x in xs])
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(ctx, grad):
        splits = np.cumsum(ctx.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=ctx.axis))


class GetItem(Function):
    @staticmethod
    def forward(ctx, x, index=None):
        ctx.save(shape=x.shape, dtype=x.dtype, index=index)
        return np.array(x[index])

    @staticmethod
    def backward(ctx, grad):
        full = np.zeros(ctx.shape, dtype=grad.dtype)
        np.add.at(full, ctx.index, grad)
        return full


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if -1 in shape:
        known = int(np.prod([s for s in shape if s != -1]))
        if shape.count(-1) > 1 or known == 0 or x.data.size % known:
            raise DimensionError(f"cannot reshape {x.shape} to {shape}")
        shape = tuple(x.data.size // known if s == -1 else s for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} ({x.data.size} elements) to {shape}")
    return Reshape.apply(x, shape=shape)


def permute(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)) or len(axes) != x.ndim:
        raise DimensionError(f"invalid permutation {axes} for shape {x.shape}")
    return Permute.apply(x, axes=tuple(a % x.ndim for a in axes))


def concat(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat needs at least one tensor")
    ndim = xs[0].ndim
    if not -ndim <= axis < ndim:
        raise IndexError(f"axis {axis} out of range for {ndim}-d tensors")
    axis %= ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != axis):
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {xs[0].shape} and {x.shape}")
    return Concat.apply(*xs, axis=axis)


# ---------------------------------------------------------------------------
# products


class MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a=a, b=b)
        return np.matmul(a, b)

    @staticmethod
    def backward(ctx, grad):
        return np.matmul(grad, np.swapaxes(ctx.b, -1, -2)), np.matmul(np.swapaxes(ctx.a, -1, -2), grad)


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]`` with broadcast batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None
    return MatMul.apply(a, b)


class Einsum(Function):
    @staticmethod
    def forward(ctx, a, b, spec=""):
        ctx.save(a=a, b=b, spec=spec)
        return np.einsum(spec, a, b, optimize=True)

    @staticmethod
    def backward(ctx, grad):
        ins, out = ctx.spec.split("->")
        sa, sb = ins.split(",")
        ga = np.einsum(f"{out},{sb}->{sa}", grad, ctx.b, optimize=True)
        gb = np.einsum(f"{out},{sa}->{sb}", grad, ctx.a, optimize=True)
        return ga, gb


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand Einstein summation.

    Every index of an operand must occur in the other operand or in the
    output, and no index may repeat within one operand.
    """
    a, b = as_tensor(a), as_tensor(b)
    spec = spec.replace(" ", "")
    try:
        ins, out = spec.split("->")
        sa, sb = ins.split(",")
    except ValueError:
        raise ContractError(f"einsum spec {spec!r} must have the form 'ab,bc->ac'") from None
    for s, other in ((sa, sb + out), (sb, sa + out)):
        if len(set(s)) != len(s) or any(c not in other for c in s):
            raise ContractError(f"einsum spec {spec!r} is outside the supported subset")
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise DimensionError(f"einsum {spec!r}: operand ranks {a.ndim}, {b.ndim} do not match")
    extents: dict[str, int] = {}
    for s, shape in ((sa, a.shape), (sb, b.shape)):
        for c, n in zip(s, shape):
            if extents.setdefault(c, n) != n:
                raise DimensionError(f"einsum {spec!r}: index {c!r} has extents {extents[c]} and {n} ({a.shape} vs {b.shape})")
    return Einsum.apply(a, b, spec=spec)


# ---------------------------------------------------------------------------
# neural-network primitives


class Softmax(Function):
    @staticmethod
    def forward(ctx, x, axis=-1):
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)
        ctx.save(s=s, axis=axis)
        return s

    @staticmethod
    def backward(ctx, grad):
        s = ctx.s
        return s * (grad - (grad * s).sum(axis=ctx.axis, keepdims=True))


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax; entries equal to -inf receive probability zero."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"softmax axis {axis} out of range for shape {x.shape}")
    return Softmax.apply(x, axis=axis % x.ndim)


def temporal_output_length(T: int, kernel: int, stride: int, pad: int) -> int:
    return (T + 2 * pad - kernel) // stride + 1


class Conv2dTime(Function):
    @staticmethod
    def forward(ctx, x, w, stride=1, pad=0):
        N, C, T, V = x.shape
        O, _, K, _ = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (0, 0))) if pad else x
        win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, ::stride]
        # win: (N, C, T', V, K) -> (N, T', V, C, K)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4))
        Tp = cols.shape[1]
        wk = w[..., 0]
        out = cols.reshape(N * Tp * V, C * K) @ wk.reshape(O, C * K).T
        ctx.save(cols=cols, w=wk, stride=stride, pad=pad, xshape=x.shape, Tpad=xp.shape[2])
        return np.ascontiguousarray(out.reshape(N, Tp, V, O).transpose(0, 3, 1, 2))

    @staticmethod
    def backward(ctx, grad):
        N, C, T, V = ctx.xshape
        O, _, K = ctx.w.shape
        Tp = grad.shape[2]
        g = grad.transpose(0, 2, 3, 1).reshape(N * Tp * V, O)
        gw = (g.T @ ctx.cols.reshape(N * Tp * V, C * K)).reshape(O, C, K, 1)
        gcols = (g @ ctx.w.reshape(O, C * K)).reshape(N, Tp, V, C, K)
        gxp = np.zeros((N, C, ctx.Tpad, V), dtype=grad.dtype)
        stop = ctx.stride * (Tp - 1) + 1
        for k in range(K):
            gxp[:, :, k:k + stop:ctx.stride, :] += gcols[..., k].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ctx.pad:ctx.pad + T, :] if ctx.pad else gxp
        return gx, gw


def conv2d_time(x, w, stride: int = 1, pad: int | None = None) -> Tensor:
    """Convolve ``x[N, C_in, T, V]`` with ``w[C_out, C_in, K_t, 1]`` along T only.

    ``pad`` defaults to ``(K_t - 1) // 2`` zero frames on each side.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[3] != 1:
        raise DimensionError(f"conv2d_time expects x[N,C,T,V] and w[O,C,K,1], got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d_time: input channels {x.shape[1]} != kernel channels {w.shape[1]}")
    K = w.shape[2]
    if K % 2 == 0:
        raise ConfigError(f"temporal kernel size must be odd, got {K}")
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    if pad is None:
        pad = (K - 1) // 2
    if temporal_output_length(x.shape[2], K, stride, pad) < 1:
        raise ContractError(f"conv2d_time: T={x.shape[2]} with K_t={K}, pad={pad} gives an empty output")
    return Conv2dTime.apply(x, w, stride=int(stride), pad=int(pad))


class BatchNormTrain(Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-5):
        axes = (0,) + tuple(range(2, x.ndim))
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv_std
        ctx.save(xhat=xhat, inv_std=inv_std, gamma=gamma.reshape(bshape), axes=axes,
                 mean=mu.reshape(-1), var=var.reshape(-1))
        return gamma.reshape(bshape) * xhat + beta.reshape(bshape)

    @staticmethod
    def backward(ctx, grad):
        axes, xhat = ctx.axes, ctx.xhat
        m = grad.size // grad.shape[1]
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * ctx.gamma
        dx = ctx.inv_std / m * (
            m * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta


class BatchNormEval(Function):
    @staticmethod
    def forward(ctx, x, gamma, beta, mean=None, var=None, eps=1e-5):
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
        xhat = (x - mean.astype(x.dtype).reshape(bshape)) * inv_std
        ctx.save(xhat=xhat, inv_std=inv_std, gamma=gamma.reshape(bshape), axes=(0,) + tuple(range(2, x.ndim)))
        return gamma.reshape(bshape) * xhat + beta.reshape(bshape)

    @staticmethod
    def backward(ctx, grad):
        return (grad * ctx.gamma * ctx.inv_std,
                (grad * ctx.xhat).sum(axis=ctx.axes),
                grad.sum(axis=ctx.axes))


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the running buffers are
    used.  Fresh buffers hold mean 0 and variance 1.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batch_norm: input {x.shape} does not have {gamma.shape[0]} channels")
    if eps <= 0:
        raise ConfigError("batch_norm epsilon must be positive")
    if not training:
        return BatchNormEval.apply(x, gamma, beta, mean=running_mean, var=running_var, eps=eps)
    out = BatchNormTrain.apply(x, gamma, beta, eps=eps)
    m = x.data.size // x.shape[1]
    mu = x.data.mean(axis=(0,) + tuple(range(2, x.ndim)))
    var = x.data.var(axis=(0,) + tuple(range(2, x.ndim)))
    unbiased = var * (m / (m - 1)) if m > 1 else var
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased
    return out


class CrossEntropy(Function):
    @staticmethod
    def forward(ctx, logits, labels=None):
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsum
        n = logits.shape[0]
        ctx.save(p=np.exp(logp), labels=labels, n=n)
        return np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    @staticmethod
    def backward(ctx, grad):
        g = ctx.p.copy()
        g[np.arange(ctx.n), ctx.labels] -= 1.0
        return g * (grad / ctx.n)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise IndexError(f"labels must lie in [0, {logits.shape[1]})")
    return CrossEntropy.apply(logits, labels=labels)


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Run reverse-mode differentiation of a scalar ``loss``."""
    (tape or loss._tape or current_tape()).backward(loss)
