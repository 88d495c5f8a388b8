"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to :class:`Tensor` operands
(eager forward, values stored on the tape) and replays the records backwards
to accumulate vector-Jacobian products.  The module-level functions
(:func:`tanh`, :func:`matmul`, ...) dispatch on their arguments: with at least
one ``Tensor`` they record on that tensor's tape, otherwise they evaluate the
same forward rule on plain numpy arrays.  Geometry code written against these
functions therefore runs unchanged in both modes.

>>> tape = Tape()
>>> x = tape.leaf(3.0)
>>> y = x * x
>>> float(tape.gradient(y, [x])[0])
6.0
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import NotScalarError, ShapeError

__all__ = [
    "Tape", "Tensor", "Primitive", "PRIMITIVES", "register", "apply", "value",
    "is_tensor", "finite_diff", "gradcheck",
    "add", "sub", "mul", "div", "neg", "matmul", "sum", "norm2", "tanh", "tan",
    "atan", "artanh", "asin", "asinh", "sqrt", "clamp", "relu", "exp", "log",
    "abs", "softmax", "softmax_cross_entropy", "concat", "getitem",
    "broadcast_to", "reshape", "transpose", "where",
]


@dataclass(frozen=True)
class Primitive:
    """A differentiable primitive.

    ``forward(*values, **attrs)`` returns ``(out, saved)``; ``vjp(g, out,
    saved, values, attrs)`` returns one cotangent (or ``None``) per input.
    """

    name: str
    forward: Callable
    vjp: Callable


PRIMITIVES: dict[str, Primitive] = {}


def register(name, forward, vjp):
    """Add a primitive to the registry (used by fused kernels elsewhere)."""
    PRIMITIVES[name] = Primitive(name, forward, vjp)
    return PRIMITIVES[name]


class _Node:
    __slots__ = ("op", "inputs", "values", "attrs", "out", "saved")

    def __init__(self, op, inputs, values, attrs, out, saved):
        self.op = op
        self.inputs = inputs  # node id per input, or None for constants
        self.values = values
        self.attrs = attrs
        self.out = out
        self.saved = saved


class Tape:
    """Append-only record of primitive applications.

    Node ``i`` only ever refers to nodes ``< i``, so a single reverse sweep is
    a valid topological order.  A tape is not thread-safe; use one per thread.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, val) -> "Tensor":
        """Register a differentiable input (parameter, curvature, ...)."""
        arr = np.array(val, dtype=np.float64)
        self.nodes.append(_Node("leaf", (), (), {}, arr, None))
        return Tensor(arr, self, len(self.nodes) - 1)

    def record(self, op: str, inputs, **attrs) -> "Tensor":
        """Evaluate primitive ``op`` eagerly and append it to the tape."""
        prim = PRIMITIVES.get(op)
        if prim is None:
            raise KeyError(f"unknown primitive {op!r}")
        ids, vals = [], []
        for t in inputs:
            if isinstance(t, Tensor):
                if t.tape is not self:
                    raise ValueError("operands belong to different tapes")
                ids.append(t.node)
                vals.append(t.value)
            else:
                ids.append(None)
                vals.append(t)
        out, saved = prim.forward(*vals, **attrs)
        out = np.asarray(out, dtype=np.float64)
        self.nodes.append(_Node(op, tuple(ids), tuple(vals), attrs, out, saved))
        return Tensor(out, self, len(self.nodes) - 1)

    def backward(self, loss: "Tensor") -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. every leaf, keyed by node id.

        Leaves that do not influence ``loss`` get a zero array.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("loss must be a Tensor recorded on this tape")
        if loss.value.size != 1:
            raise NotScalarError(f"loss has shape {loss.value.shape}, expected a scalar")
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
        leaves: dict[int, np.ndarray] = {}
        for i in range(loss.node, -1, -1):
            g = grads.pop(i, None)
            node = self.nodes[i]
            if node.op == "leaf":
                leaves[i] = g if g is not None else np.zeros_like(node.out)
                continue
            if g is None:
                continue
            cots = PRIMITIVES[node.op].vjp(g, node.out, node.saved, node.values, node.attrs)
            for j, c in zip(node.inputs, cots):
                if j is None or c is None:
                    continue
                c = np.asarray(c, dtype=np.float64)
                if j in grads:
                    grads[j] = grads[j] + c
                else:
                    grads[j] = c
        for i in range(loss.node + 1, len(self.nodes)):
            if self.nodes[i].op == "leaf":
                leaves[i] = np.zeros_like(self.nodes[i].out)
        return leaves

    def gradient(self, loss: "Tensor", wrt) -> list[np.ndarray]:
        """Convenience wrapper around :meth:`backward` for a list of leaves."""
        g = self.backward(loss)
        return [g[t.node] for t in wrt]


class Tensor:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("value", "tape", "node")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, val, tape: Tape, node: int):
        self.value = val
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Tensor(node={self.node}, value={self.value!r})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 1:
            raise ValueError("only positive integer powers are supported")
        out = self
        for _ in range(n - 1):
            out = out * self
        return out

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value(x):
    """The numeric value of ``x`` (unwraps tensors)."""
    return x.value if isinstance(x, Tensor) else x


def apply(op: str, *inputs, **attrs):
    """Run primitive ``op``; record it if any input is a Tensor."""
    for t in inputs:
        if isinstance(t, Tensor):
            return t.tape.record(op, inputs, **attrs)
    out, _ = PRIMITIVES[op].forward(*inputs, **attrs)
    return out


# ---------------------------------------------------------------------------
# primitive rules

def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    shape = np.shape(shape) if not isinstance(shape, tuple) else shape
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(np.shape(a), np.shape(b))
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {np.shape(a)} and {np.shape(b)}") from exc


def _binary(fn):
    def forward(a, b):
        _check_broadcast(a, b)
        return fn(a, b), None
    return forward


register("add", _binary(np.add),
         lambda g, out, s, v, at: (_unbroadcast(g, np.shape(v[0])), _unbroadcast(g, np.shape(v[1]))))
register("sub", _binary(np.subtract),
         lambda g, out, s, v, at: (_unbroadcast(g, np.shape(v[0])), _unbroadcast(-g, np.shape(v[1]))))
register("mul", _binary(np.multiply),
         lambda g, out, s, v, at: (_unbroadcast(g * v[1], np.shape(v[0])),
                                   _unbroadcast(g * v[0], np.shape(v[1]))))
register("div", _binary(np.divide),
         lambda g, out, s, v, at: (_unbroadcast(g / v[1], np.shape(v[0])),
                                   _unbroadcast(-g * out / v[1], np.shape(v[1]))))
register("neg", lambda a: (np.negative(a), None), lambda g, out, s, v, at: (-g,))


def _matmul_fwd(a, b):
    if sp.issparse(b):
        raise ShapeError("sparse matrices are only supported as the left operand")
    sa, sb = np.shape(a), np.shape(b)
    if len(sa) == 0 or len(sb) == 0 or sa[-1] != sb[-2 if len(sb) > 1 else 0]:
        raise ShapeError(f"matmul shapes {sa} and {sb} do not conform")
    if sp.issparse(a):
        return np.asarray(a @ b), None
    return np.matmul(a, b), None


def _matmul_vjp(g, out, s, v, at):
    a, b = v
    if sp.issparse(a):
        return None, np.asarray(a.T @ g)
    a2 = a[None, :] if np.ndim(a) == 1 else a
    b2 = b[:, None] if np.ndim(b) == 1 else b
    g2 = g
    if np.ndim(a) == 1:
        g2 = g2[..., None, :]
    if np.ndim(b) == 1:
        g2 = g2[..., None]
    ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
    gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
    if np.ndim(a) == 1:
        ga = ga.reshape(-1, ga.shape[-1]).sum(axis=0) if ga.ndim > 1 else ga
        ga = ga.reshape(np.shape(a))
    if np.ndim(b) == 1:
        gb = gb.reshape(np.shape(b)) if gb.size == np.size(b) else gb.sum(axis=tuple(range(gb.ndim - 2))).reshape(np.shape(b))
    return _unbroadcast(ga, np.shape(a)), _unbroadcast(gb, np.shape(b))


register("matmul", _matmul_fwd, _matmul_vjp)


def _sum_fwd(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims), None


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


register("sum", _sum_fwd,
         lambda g, out, s, v, at: (_expand_reduced(g, np.shape(v[0]), at.get("axis"), at.get("keepdims", False)),))


def _norm2_fwd(a, axis=-1, keepdims=True):
    return np.sqrt(np.sum(np.square(a), axis=axis, keepdims=keepdims)), None


def _norm2_vjp(g, out, s, v, at):
    axis, keepdims = at.get("axis", -1), at.get("keepdims", True)
    n = out if keepdims or axis is None else np.expand_dims(out, axis)
    gg = g if keepdims or axis is None else np.expand_dims(g, axis)
    safe = np.where(n > 0, n, 1.0)
    return (np.where(n > 0, gg * v[0] / safe, 0.0),)


register("norm2", _norm2_fwd, _norm2_vjp)


def _unary(name, fn, dfn):
    """Elementwise primitive; ``dfn(x, out)`` is the local derivative."""
    register(name, lambda a: (fn(a), None), lambda g, out, s, v, at: (g * dfn(v[0], out),))


_unary("tanh", np.tanh, lambda x, y: 1.0 - y * y)
_unary("tan", np.tan, lambda x, y: 1.0 + y * y)
_unary("atan", np.arctan, lambda x, y: 1.0 / (1.0 + x * x))
_unary("artanh", np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))
_unary("asin", np.arcsin, lambda x, y: 1.0 / np.sqrt(1.0 - x * x))
_unary("asinh", np.arcsinh, lambda x, y: 1.0 / np.sqrt(1.0 + x * x))
_unary("sqrt", np.sqrt, lambda x, y: 0.5 / y)
_unary("relu", lambda a: np.maximum(a, 0.0), lambda x, y: (np.asarray(x) > 0).astype(np.float64))
_unary("exp", np.exp, lambda x, y: y)
_unary("log", np.log, lambda x, y: 1.0 / x)
_unary("abs", np.abs, lambda x, y: np.sign(x))


def _clamp_fwd(a, lo=None, hi=None):
    return np.clip(a, lo, hi), None


def _clamp_vjp(g, out, s, v, at):
    x = np.asarray(v[0])
    keep = np.ones(np.shape(x), dtype=bool)
    if at.get("lo") is not None:
        keep &= x >= at["lo"]
    if at.get("hi") is not None:
        keep &= x <= at["hi"]
    return (g * keep,)


register("clamp", _clamp_fwd, _clamp_vjp)


def _softmax_fwd(a, axis=-1):
    z = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True), None


register("softmax", _softmax_fwd,
         lambda g, out, s, v, at: (out * (g - np.sum(g * out, axis=at.get("axis", -1), keepdims=True)),))


def _xent_fwd(logits, labels, index=None):
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects (n, C) logits")
    rows = np.arange(logits.shape[0]) if index is None else np.asarray(index)
    z = logits[rows]
    z = z - np.max(z, axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    y = np.asarray(labels)[rows]
    loss = -np.mean(logp[np.arange(len(rows)), y])
    return loss, (rows, y, np.exp(logp))


def _xent_vjp(g, out, saved, v, at):
    rows, y, p = saved
    d = p.copy()
    d[np.arange(len(rows)), y] -= 1.0
    full = np.zeros(np.shape(v[0]))
    np.add.at(full, rows, d * (g / len(rows)))
    return full, None, None


register("softmax_cross_entropy", _xent_fwd, _xent_vjp)


def _concat_fwd(*arrs, axis=-1):
    return np.concatenate(arrs, axis=axis), None


def _concat_vjp(g, out, s, v, at):
    axis = at.get("axis", -1)
    sizes = [np.shape(a)[axis] for a in v]
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


register("concat", _concat_fwd, _concat_vjp)


def _getitem_vjp(g, out, s, v, at):
    full = np.zeros(np.shape(v[0]))
    np.add.at(full, at["idx"], g)
    return (full,)


register("getitem", lambda a, idx: (np.asarray(a)[idx], None), _getitem_vjp)
register("broadcast_to", lambda a, shape: (np.broadcast_to(a, shape).copy(), None),
         lambda g, out, s, v, at: (_unbroadcast(g, np.shape(v[0])),))
register("reshape", lambda a, shape: (np.reshape(a, shape), None),
         lambda g, out, s, v, at: (np.reshape(g, np.shape(v[0])),))
register("transpose", lambda a: (np.swapaxes(a, -1, -2), None),
         lambda g, out, s, v, at: (np.swapaxes(g, -1, -2),))


def _where_fwd(cond, a, b):
    return np.where(cond, a, b), None


def _where_vjp(g, out, s, v, at):
    cond = np.asarray(v[0], dtype=bool)
    zero = np.zeros_like(g)
    return (None,
            _unbroadcast(np.where(cond, g, zero), np.shape(v[1])),
            _unbroadcast(np.where(cond, zero, g), np.shape(v[2])))


register("where", _where_fwd, _where_vjp)


# ---------------------------------------------------------------------------
# dispatching front-ends

def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def div(a, b):
    return apply("div", a, b)


def neg(a):
    return apply("neg", a)


def matmul(a, b):
    return apply("matmul", a, b)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    return apply("sum", a, axis=axis, keepdims=keepdims)


def norm2(a, axis=-1, keepdims=True):
    """Euclidean norm along ``axis``; its gradient is defined as 0 at 0."""
    return apply("norm2", a, axis=axis, keepdims=keepdims)


def tanh(a):
    return apply("tanh", a)


def tan(a):
    return apply("tan", a)


def atan(a):
    return apply("atan", a)


def artanh(a):
    return apply("artanh", a)


def asin(a):
    return apply("asin", a)


def asinh(a):
    return apply("asinh", a)


def sqrt(a):
    return apply("sqrt", a)


def clamp(a, lo=None, hi=None):
    """Clip to ``[lo, hi]``; gradient is 1 inside the range and 0 outside."""
    return apply("clamp", a, lo=lo, hi=hi)


def relu(a):
    return apply("relu", a)


def exp(a):
    return apply("exp", a)


def log(a):
    return apply("log", a)


def abs(a):  # noqa: A001
    return apply("abs", a)


def softmax(a, axis=-1):
    return apply("softmax", a, axis=axis)


def softmax_cross_entropy(logits, labels, index=None):
    """Mean cross-entropy of ``logits[index]`` against integer ``labels[index]``."""
    return apply("softmax_cross_entropy", logits, labels, index=index)


def concat(arrays, axis=-1):
    return apply("concat", *arrays, axis=axis)


def getitem(a, idx):
    return apply("getitem", a, idx=idx)


def broadcast_to(a, shape):
    return apply("broadcast_to", a, shape=tuple(shape))


def reshape(a, shape):
    return apply("reshape", a, shape=tuple(shape))


def transpose(a):
    return apply("transpose", a)


def where(cond, a, b):
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is never differentiated."""
    return apply("where", np.asarray(cond, dtype=bool), a, b)


# ---------------------------------------------------------------------------
# verification

def finite_diff(f, theta, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``theta``."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(theta))
        flat[i] = old - h
        fm = float(f(theta))
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradcheck(fn, inputs, h=1e-5, atol=1e-7):
    """Compare tape gradients of ``fn(*tensors)`` with central differences.

    ``inputs`` is a list of arrays; every one becomes a leaf.  Returns the
    worst relative error, where entries whose magnitude is below ``1e-3`` are
    judged on absolute error against ``atol`` instead.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    out = fn(*leaves)
    if not isinstance(out, Tensor):
        raise ValueError("fn must return a Tensor that depends on its inputs")
    analytic = tape.gradient(out, leaves)
    worst = 0.0
    for k, x in enumerate(inputs):
        def f(theta, k=k):
            args = list(inputs)
            args[k] = theta
            return np.asarray(fn(*args)).sum()
        numeric = finite_diff(f, x, h)
        a = analytic[k]
        scale = np.maximum(np.abs(a), np.abs(numeric))
        big = scale >= 1e-3
        if np.any(big):
            worst = max(worst, float(np.max(np.abs(a - numeric)[big] / scale[big])))
        if np.any(~big):
            err = float(np.max(np.abs(a - numeric)[~big]))
            if err > atol:
                worst = max(worst, err / atol * 1e-4)
    return worst
