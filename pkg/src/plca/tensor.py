"""Reverse-mode differentiable dense arrays in double precision.

Every operation returns a new :class:`Tensor`; when any input requires a
gradient, the result records its parents and a backward closure mapping the
output gradient to one gradient per parent. :func:`backward` walks the graph
in a fixed topological order, so repeated runs give bitwise-identical
gradients.

Quantities that the backward pass treats as constants (detached statistics,
argmax indices, sort permutations) are routed through :func:`constant`. Inside
:func:`record_constants` / :func:`replay_constants` those values are frozen,
which lets :func:`finite_diff_check` differentiate exactly the function whose
gradient the graph computes.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import kernels

EPS = 1e-12


class TensorError(Exception):
    """Base class for tensor engine failures."""


class ShapeError(TensorError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " vs ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(TensorError, ValueError):
    def __init__(self, op, detail):
        self.op = op
        super().__init__(f"{op}: {detail}")


# ---------------------------------------------------------------------------
# frozen constants


class ConstantTape:
    """Ordered record of values produced through :func:`constant`."""

    def __init__(self):
        self.values = []
        self.replaying = False
        self.pos = 0


_tape = None


def constant(value):
    """Pass ``value`` through the active tape (record, replay, or no-op)."""
    tape = _tape
    if tape is None:
        return value
    if not tape.replaying:
        tape.values.append(np.array(value, copy=True))
        return value
    if tape.pos >= len(tape.values):
        raise TensorError("constant replay: more constants requested than recorded")
    stored = tape.values[tape.pos]
    tape.pos += 1
    if np.shape(stored) != np.shape(value):
        raise ShapeError("constant replay", np.shape(stored), np.shape(value))
    return stored.copy()


@contextlib.contextmanager
def record_constants():
    global _tape
    prev, _tape = _tape, ConstantTape()
    try:
        yield _tape
    finally:
        _tape = prev


@contextlib.contextmanager
def replay_constants(tape):
    global _tape
    prev, _tape = _tape, tape
    tape.replaying, tape.pos = True, 0
    try:
        yield tape
    finally:
        tape.replaying = False
        _tape = prev


# ---------------------------------------------------------------------------
# Tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _require_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise DomainError(op, "non-finite result")
    return arr


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div", "division by zero")
    out = _require_finite("div", a.data / b.data)

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    if not p.is_integer() and np.any(a.data < 0):
        raise DomainError("power", f"negative base with exponent {p}")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _require_finite("power", a.data ** p)
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = _require_finite("exp", np.exp(a.data))
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a, eps=EPS):
    """Natural log of ``a + eps``; raises unless every ``a + eps`` is positive."""
    a = as_tensor(a)
    z = a.data + eps
    if np.any(z <= 0):
        raise DomainError("log", "argument must satisfy x + eps > 0")
    return _make(np.log(z), (a,), lambda g: (g / z,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# ---------------------------------------------------------------------------
# reductions


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size // max(1, np.size(a.data.sum(axis=axis)))
    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims) / count,), "mean")


def tmax(a, axis):
    """Max over ``axis``; returns ``(values, argmax)`` with ties to the lowest index."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    ex = np.expand_dims(idx, axis)
    vals = np.take_along_axis(a.data, ex, axis).squeeze(axis)

    def bw(g):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, ex, np.expand_dims(g, axis), axis)
        return (z,)

    return _make(vals, (a,), bw, "max"), idx


def norm(a, axis, keepdims=False, eps=EPS):
    """L2 norm ``sqrt(sum(a**2) + eps)`` over ``axis``."""
    a = as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True) + eps)
    out = n if keepdims else np.squeeze(n, axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * a.data / n,)

    return _make(out, (a,), bw, "norm")


# ---------------------------------------------------------------------------
# linear algebra / nn


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def conv2d(x, w, b, stride=1):
    """3x3 convolution, zero padding 1; x (B,Cin,H,W), w (Cout,Cin,3,3), b (Cout,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b.shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, b.shape, detail="bias")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(xd, wd, np.ascontiguousarray(b.data), stride)

    def bw(g):
        dx, dw, db = kernels.conv2d_backward(xd, wd, np.ascontiguousarray(g), stride,
                                             x.requires_grad)
        return dx, dw, db

    return _make(out, (x, w, b), bw, "conv2d")


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),),
                 "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    y = np.exp(out)
    return _make(out, (a,), lambda g: (g - y * g.sum(axis=axis, keepdims=True),),
                 "log_softmax")


# ---------------------------------------------------------------------------
# structure


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def getitem(a, idx):
    """Basic slicing or integer-array gather; gradients scatter-add back."""
    a = as_tensor(a)
    try:
        out = np.array(a.data[idx])
    except IndexError as exc:
        raise ShapeError("getitem", a.shape, detail=str(exc)) from None

    def bw(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _make(out, (a,), bw, "getitem")


def gather(a, indices, axis=0):
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise ShapeError("gather", a.shape, indices.shape, detail=f"index out of range on axis {axis}")
    idx = (slice(None),) * (axis % a.ndim) + (indices,)
    return getitem(a, idx)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def detach(a):
    """Value passthrough, gradient barrier."""
    return Tensor(constant(np.array(as_tensor(a).data, copy=True)))


# ---------------------------------------------------------------------------
# reverse pass


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor ``t``."""
    if root.data.size != 1:
        raise TensorError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = pg if k not in grads else grads[k] + pg


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheck:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float


def _scalar_value(out):
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise TensorError("finite_diff_check: f must return a scalar Tensor")
    v = float(out.data.reshape(-1)[0])
    if not np.isfinite(v):
        raise DomainError("finite_diff_check", "f evaluated to a non-finite value")
    return v


def finite_diff_report(f, x, eps=1e-5):
    """Compare the graph gradient of ``f`` at ``x`` against central differences.

    Detached quantities are recorded on the analytic pass and held fixed on
    every perturbed evaluation.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64, copy=True)
    with record_constants() as tape:
        leaf = Tensor(x0.copy(), requires_grad=True)
        out = f(leaf)
        _scalar_value(out)
        backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)
    numeric = np.empty_like(x0)
    for k in range(x0.size):
        vals = []
        for step in (eps, -eps):
            xp = x0.copy()
            xp.flat[k] += step
            with replay_constants(tape):
                vals.append(_scalar_value(f(Tensor(xp))))
        numeric.flat[k] = (vals[0] - vals[1]) / (2.0 * eps)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    err = np.abs(analytic - numeric) / denom
    return GradCheck(analytic, numeric, float(err.max()) if err.size else 0.0)


def finite_diff_check(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    return finite_diff_report(f, x, eps).max_rel_error
