"""Minimal reverse-mode differentiation over array-valued primitives.

Values are numpy arrays; a :class:`Var` wraps one and remembers how to pull a
cotangent back to its parents. Operations are recorded on the active
:class:`Tape` in creation order, so the backward pass is a reverse sweep of
that list. When no operand is a ``Var`` every primitive falls through to
plain numpy, which lets the same rollout code run untaped at full speed.
"""
from __future__ import annotations

import numpy as np

_ACTIVE: list["Tape"] = []


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()

    def backward(self, root: "Var") -> None:
        if np.ndim(root.value) != 0:
            raise ValueError("backward needs a scalar root")
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node._pullback is None:
                continue
            for parent, pg in zip(node._parents, node._pullback(g)):
                if pg is None or not isinstance(parent, Var):
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg


class Var:
    """Array value with a gradient slot; leaves are created by the caller."""

    __slots__ = ("value", "grad", "_parents", "_pullback")
    __array_priority__ = 1000

    def __init__(self, value, parents=(), pullback=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._pullback = pullback

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(o))

    def __rsub__(self, o):
        return add(o, neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Var):
            return mul(self, reciprocal(o))
        return mul(self, 1.0 / np.asarray(o, dtype=np.float64))

    def __rtruediv__(self, o):
        return mul(o, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if k == 2:
            return square(self)
        return power(self, k)

    def __getitem__(self, idx):
        return take(self, idx)

    def __matmul__(self, o):
        return matmul(self, o)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _node(value, parents, pullback):
    v = Var(value, parents, pullback)
    if _ACTIVE:
        _ACTIVE[-1].nodes.append(v)
    return v


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out
    sa, sb = np.shape(av), np.shape(bv)

    def pull(g):
        ga = _unbroadcast(g * bv, sa) if isinstance(a, Var) else None
        gb = _unbroadcast(g * av, sb) if isinstance(b, Var) else None
        return ga, gb

    return _node(out, (a, b), pull)


def reciprocal(a):
    if not isinstance(a, Var):
        return 1.0 / a
    out = 1.0 / a.value
    return _node(out, (a,), lambda g: (-g * out * out,))


def square(a):
    if not isinstance(a, Var):
        return a * a
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def power(a, k):
    if not isinstance(a, Var):
        return a**k
    av = a.value
    return _node(av**k, (a,), lambda g: (g * k * av ** (k - 1),))


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    av = a.value
    return _node(np.log(av), (a,), lambda g: (g / av,))


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    out = np.tanh(a.value)

    def pull(g):
        d = out * out
        np.subtract(1.0, d, out=d)
        d *= g
        return (d,)

    return _node(out, (a,), pull)


def sigmoid(a):
    if not isinstance(a, Var):
        return 1.0 / (1.0 + np.exp(-a))
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    if not isinstance(a, Var):
        return np.maximum(a, 0.0)
    mask = a.value > 0
    return _node(a.value * mask, (a,), lambda g: (g * mask,))


def take(a, idx):
    if not isinstance(a, Var):
        return a[idx]
    shape = a.value.shape

    def pull(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _node(a.value[idx], (a,), pull)


def matmul(a, b):
    av, bv = _val(a), _val(b)
    out = av @ bv
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return out

    def pull(g):
        ga = g @ bv.T if isinstance(a, Var) else None
        gb = av.T @ g if isinstance(b, Var) else None
        return ga, gb

    return _node(out, (a, b), pull)


def affine(x, W, b):
    """``x @ W + b`` as one node; x is (batch, fan_in)."""
    xv, Wv, bv = _val(x), _val(W), _val(b)
    out = xv @ Wv
    out += bv
    if not any(isinstance(t, Var) for t in (x, W, b)):
        return out

    def pull(g):
        gx = g @ Wv.T if isinstance(x, Var) else None
        gW = xv.T @ g if isinstance(W, Var) else None
        gb = g.sum(axis=0) if isinstance(b, Var) else None
        return gx, gW, gb

    return _node(out, (x, W, b), pull)


def columns(cols):
    """Stack 1-d arrays / Vars of equal length as the columns of a matrix."""
    vals = [np.asarray(_val(c), dtype=np.float64) for c in cols]
    scalar = [v.ndim == 0 for v in vals]
    n = max(v.shape[0] for v in vals if v.ndim > 0)
    vals = [np.broadcast_to(v, (n,)) if s else v for v, s in zip(vals, scalar)]
    widths = [1 if v.ndim == 1 else v.shape[1] for v in vals]
    out = np.concatenate([v[:, None] if v.ndim == 1 else v for v in vals], axis=1)
    if not any(isinstance(c, Var) for c in cols):
        return out
    bounds = np.cumsum([0] + widths)

    def pull(g):
        res = []
        for c, v, s, lo, hi in zip(cols, vals, scalar, bounds[:-1], bounds[1:]):
            if not isinstance(c, Var):
                res.append(None)
            elif s:
                res.append(g[:, lo].sum())
            elif v.ndim == 1:
                res.append(g[:, lo])
            else:
                res.append(g[:, lo:hi])
        return res

    return _node(out, tuple(cols), pull)


def total(a, axis=None):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis)
    shape = a.value.shape

    def pull(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.sum(a.value, axis=axis), (a,), pull)


def mean(a):
    if not isinstance(a, Var):
        return np.mean(a)
    shape = a.value.shape
    n = a.value.size
    return _node(np.mean(a.value), (a,), lambda g: (np.full(shape, g / n),))


def value(x):
    """Plain array behind a Var (identity for arrays)."""
    return _val(x)


ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
