"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is define-by-run: while a :class:`Tape` is active (as a context
manager), every operation on :class:`Tensor` values appends a node holding a
backward rule. :func:`backward` replays the nodes in reverse, accumulating
gradients across fan-out. A fresh tape is built per forward pass, so graph
topology is free to change between slides.

All arithmetic is 64-bit. Any op that produces NaN/Inf from finite inputs
raises :class:`~goat_wsi.errors.NumericsError` instead of propagating silently.
Broadcasting is deliberately restricted to the bias-style patterns the model
needs: equal shapes, scalars, trailing-axis alignment (e.g. ``(N, D) + (D,)``)
and a trailing singleton (e.g. ``(E, H, dh) * (E, H, 1)``).

A tape and the tensors recorded on it are confined to one thread; the tape
stack is thread-local.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError, NumericsError

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def current_tape() -> Optional["Tape"]:
    """The innermost active tape of this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array with an identity usable as a gradient key."""

    _ids = itertools.count()

    __slots__ = ("data", "requires_grad", "id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.id = next(Tensor._ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class TapeNode:
    """One recorded operation: inputs, output, and its backward rule."""

    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name: str, inputs: Sequence[Tensor], output: Tensor,
                 backward: Callable):
        self.name = name
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations; inputs of every node precede it."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.gradients: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def backward(self, seed: Tensor) -> dict[int, Tensor]:
        return backward(self, seed)

    def grad(self, tensor: Tensor) -> Optional[Tensor]:
        """Gradient of the last backward() seed w.r.t. ``tensor``, if any."""
        return self.gradients.get(tensor.id)


def backward(tape: Tape, seed: Tensor) -> dict[int, Tensor]:
    """Accumulate d(seed)/d(tensor) for every tensor reachable from ``seed``.

    Gradients sum across fan-out. Tensors not on a path to the seed get no
    entry. The seed must be scalar and must have been produced on this tape.
    """
    if seed.size != 1:
        raise ContractError(f"backward seed must be a scalar tensor, got shape {seed.shape}")
    if not any(node.output.id == seed.id for node in tape.nodes):
        raise ContractError("backward seed was not produced on this tape")
    grads: dict[int, np.ndarray] = {seed.id: np.ones(seed.shape, dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.get(node.output.id)
        if g is None:
            continue
        for tensor, gin in zip(node.inputs, node.backward(g)):
            if gin is None or not tensor.requires_grad:
                continue
            acc = grads.get(tensor.id)
            grads[tensor.id] = gin if acc is None else acc + gin
    tape.gradients = {tid: Tensor(g) for tid, g in grads.items()}
    return tape.gradients


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericsError(f"non-finite values produced by {op}")


def _record(name: str, out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = current_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    tape.nodes.append(TapeNode(name, inputs, out, backward_fn))
    return out


def _broadcast_shape(sa: tuple, sb: tuple) -> tuple:
    if sa == sb or sb == ():
        return sa
    if sa == ():
        return sb
    if len(sb) <= len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sa) <= len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    if len(sa) == len(sb):
        if sb == sa[:-1] + (1,):
            return sa
        if sa == sb[:-1] + (1,):
            return sb
    raise DimensionError(f"shapes {sa} and {sb} are not broadcast-compatible "
                         "(only bias-style broadcasting is supported)")


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data + b.data)
    _check_finite(out.data, "add")

    def backward_fn(g):
        return (_sum_to(g, a.shape) if a.requires_grad else None,
                _sum_to(g, b.shape) if b.requires_grad else None)

    return _record("add", out, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data - b.data)
    _check_finite(out.data, "sub")

    def backward_fn(g):
        return (_sum_to(g, a.shape) if a.requires_grad else None,
                _sum_to(-g, b.shape) if b.requires_grad else None)

    return _record("sub", out, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape)
    with np.errstate(over="ignore"):
        out = Tensor(a.data * b.data)
    _check_finite(out.data, "mul")

    def backward_fn(g):
        return (_sum_to(g * b.data, a.shape) if a.requires_grad else None,
                _sum_to(g * a.data, b.shape) if b.requires_grad else None)

    return _record("mul", out, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(a.data / b.data)
    _check_finite(out.data, "div")

    def backward_fn(g):
        ga = _sum_to(g / b.data, a.shape) if a.requires_grad else None
        gb = (_sum_to(-g * a.data / (b.data * b.data), b.shape)
              if b.requires_grad else None)
        return ga, gb

    return _record("div", out, (a, b), backward_fn)


def neg(x) -> Tensor:
    x = _wrap(x)
    out = Tensor(-x.data)

    def backward_fn(g):
        return (-g,)

    return _record("neg", out, (x,), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul requires (m,k) x (k,n) matrices, got {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = Tensor(a.data @ b.data)
    _check_finite(out.data, "matmul")

    def backward_fn(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _record("matmul", out, (a, b), backward_fn)


def transpose(x) -> Tensor:
    x = _wrap(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    out = Tensor(x.data.T.copy())

    def backward_fn(g):
        return (g.T,)

    return _record("transpose", out, (x,), backward_fn)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    out = Tensor(x.data.reshape(shape))

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _record("reshape", out, (x,), backward_fn)


def relu(x) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.maximum(x.data, 0.0))

    def backward_fn(g):
        return (g * (x.data > 0.0),)

    return _record("relu", out, (x,), backward_fn)


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)
    out = Tensor(y)

    def backward_fn(g):
        return (g * (1.0 - y * y),)

    return _record("tanh", out, (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    # split by sign so exp never overflows
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y)

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", out, (x,), backward_fn)


def exp(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    out = Tensor(y)
    _check_finite(out.data, "exp")

    def backward_fn(g):
        return (g * y,)

    return _record("exp", out, (x,), backward_fn)


def log(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    out = Tensor(y)
    _check_finite(out.data, "log")

    def backward_fn(g):
        return (g / x.data,)

    return _record("log", out, (x,), backward_fn)


def sqrt(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(invalid="ignore"):
        y = np.sqrt(x.data)
    out = Tensor(y)
    _check_finite(out.data, "sqrt")

    def backward_fn(g):
        return (g / (2.0 * y),)

    return _record("sqrt", out, (x,), backward_fn)


def tsum(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Sum over one axis, or over everything when ``axis`` is None."""
    x = _wrap(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))
    _check_finite(out.data, "sum")

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(np.float64, copy=True),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, x.shape).astype(np.float64, copy=True),)

    return _record("sum", out, (x,), backward_fn)


def amax_axis0(x) -> Tensor:
    """Columnwise maximum of a matrix; ties route gradient to the lowest row."""
    x = _wrap(x)
    if x.ndim != 2:
        raise DimensionError(f"amax_axis0 expects a matrix, got shape {x.shape}")
    arg = np.argmax(x.data, axis=0)
    out = Tensor(x.data[arg, np.arange(x.shape[1])])

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[arg, np.arange(x.shape[1])] = g
        return (gx,)

    return _record("amax_axis0", out, (x,), backward_fn)


def softmax_lastdim(x, mask=None) -> Tensor:
    """Softmax along the last axis; masked entries are exactly zero.

    ``mask`` is a boolean array of the same shape, True where entries take
    part. A fully-masked slice is a degenerate row and raises.
    """
    x = _wrap(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"mask shape {mask.shape} != tensor shape {x.shape}")
        if not mask.any(axis=-1).all():
            raise ContractError("softmax over a fully-masked (degenerate) row")
        shifted = np.where(mask, x.data, -np.inf)
        m = shifted.max(axis=-1, keepdims=True)
        e = np.exp(np.where(mask, x.data - m, -np.inf))
        e = np.where(mask, e, 0.0)
    else:
        m = x.data.max(axis=-1, keepdims=True)
        e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    _check_finite(out.data, "softmax_lastdim")

    def backward_fn(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _record("softmax_lastdim", out, (x,), backward_fn)


def gather_rows(x, idx) -> Tensor:
    """Select rows ``x[idx]`` along axis 0; backward scatter-adds."""
    x = _wrap(x)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a 1-D index array")
    if x.ndim < 1:
        raise DimensionError("gather_rows input must have a leading axis")
    out = Tensor(x.data[idx])

    def backward_fn(g):
        return (_kernels.scatter_add(g, idx, x.shape[0]),)

    return _record("gather_rows", out, (x,), backward_fn)


def segment_sum(x, seg, n_segments: int) -> Tensor:
    """Sum rows of ``x`` into segments given by ``seg`` (length = rows of x)."""
    x = _wrap(x)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    if seg.shape != (x.shape[0],):
        raise DimensionError(f"segment ids {seg.shape} must match leading axis of {x.shape}")
    out = Tensor(_kernels.segment_sum(x.data, seg, n_segments))
    _check_finite(out.data, "segment_sum")

    def backward_fn(g):
        return (g[seg],)

    return _record("segment_sum", out, (x,), backward_fn)


def segment_softmax(x, seg, n_segments: int) -> Tensor:
    """Softmax over groups of rows sharing a segment id.

    ``x`` has shape (E,) or (E, H); the softmax runs independently per segment
    (and per trailing column). Stabilized by subtracting the per-segment max,
    which is a locally-constant shift and so carries no gradient of its own.
    """
    x = _wrap(x)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    if seg.shape != (x.shape[0],):
        raise DimensionError(f"segment ids {seg.shape} must match leading axis of {x.shape}")
    m = _kernels.segment_max(x.data, seg, n_segments)
    e = np.exp(x.data - m[seg])
    s = _kernels.segment_sum(e, seg, n_segments)
    y = e / s[seg]
    out = Tensor(y)
    _check_finite(out.data, "segment_softmax")

    def backward_fn(g):
        inner = _kernels.segment_sum(g * y, seg, n_segments)
        return (y * (g - inner[seg]),)

    return _record("segment_softmax", out, (x,), backward_fn)


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map ``x`` to a scalar Tensor. The relative error per coordinate
    is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    saved = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            y = f(x)
        if y.size != 1:
            raise ContractError("grad_check requires a scalar-valued function")
        if not np.isfinite(y.data).all():
            raise NumericsError("grad_check: function evaluated to a non-finite value")
        backward(tape, y)
        g = tape.grad(x)
        analytic = g.data.copy() if g is not None else np.zeros_like(x.data)
    finally:
        x.requires_grad = saved

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data)
        flat[i] = orig - eps
        fm = float(f(x).data)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * eps)
    if not np.isfinite(numeric).all():
        raise NumericsError("grad_check: finite-difference evaluation was non-finite")
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
