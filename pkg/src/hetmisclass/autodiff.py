"""Reverse-mode automatic differentiation on a per-evaluation tape.

A :class:`Var` wraps a float or numpy array.  Operations on ``Var`` objects
record themselves on the tape that is active in the current thread; calling
:func:`value_and_grad` evaluates a function once and sweeps the tape
backwards to collect the gradient.  Only the operations needed by the
log-densities in this package are provided.  New differentiable kernels are
added with :func:`primitive`, which takes the forward value and a
vector-Jacobian product.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy import special

_local = threading.local()


def _active_tape():
    return getattr(_local, "tape", None)


class Var:
    """A value with an adjoint slot, recorded on the active tape."""

    __slots__ = ("value", "grad", "parents", "vjp")
    __array_priority__ = 1000.0

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        tape = _active_tape()
        if tape is not None:
            tape.append(self)

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

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
        return Var(-self.value, (self,), lambda g: (-g,))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self):
        return vsum(self)


DifferentiableScalar = Var


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    if np.shape(g) == shape:
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def primitive(value, inputs, vjp):
    """Record ``value`` as a function of ``inputs``.

    ``vjp(g)`` must return one cotangent per entry of ``inputs`` (``None``
    where not needed).  If no input is a ``Var`` the plain value is returned.
    """
    idx = [i for i, x in enumerate(inputs) if isinstance(x, Var)]
    if not idx:
        return value
    if len(idx) == len(inputs):
        return Var(value, tuple(inputs), vjp)
    parents = tuple(inputs[i] for i in idx)

    def picked(g):
        gs = vjp(g)
        return tuple(gs[i] for i in idx)

    return Var(value, parents, picked)


# ---------------------------------------------------------------- arithmetic

def add(x, y):
    xv, yv = value_of(x), value_of(y)
    sx, sy = np.shape(xv), np.shape(yv)
    return primitive(xv + yv, (x, y), lambda g: (_unbroadcast(g, sx), _unbroadcast(g, sy)))


def sub(x, y):
    xv, yv = value_of(x), value_of(y)
    sx, sy = np.shape(xv), np.shape(yv)
    return primitive(xv - yv, (x, y), lambda g: (_unbroadcast(g, sx), _unbroadcast(-g, sy)))


def mul(x, y):
    xv, yv = value_of(x), value_of(y)
    sx, sy = np.shape(xv), np.shape(yv)
    return primitive(xv * yv, (x, y), lambda g: (_unbroadcast(g * yv, sx), _unbroadcast(g * xv, sy)))


def div(x, y):
    xv, yv = value_of(x), value_of(y)
    sx, sy = np.shape(xv), np.shape(yv)
    out = xv / yv
    return primitive(out, (x, y), lambda g: (_unbroadcast(g / yv, sx), _unbroadcast(-g * out / yv, sy)))


# --------------------------------------------------------------- elementwise

def exp(x):
    out = np.exp(value_of(x))
    return primitive(out, (x,), lambda g: (g * out,))


def log(x):
    xv = value_of(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return primitive(out, (x,), lambda g: (g / xv,))


def log1p(x):
    xv = value_of(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log1p(xv)
    return primitive(out, (x,), lambda g: (g / (1.0 + xv),))


def sigmoid(x):
    out = special.expit(value_of(x))
    return primitive(out, (x,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(x):
    """``log(1 / (1 + exp(-x)))`` without overflow."""
    xv = value_of(x)
    out = -np.logaddexp(0.0, -xv)
    return primitive(out, (x,), lambda g: (g * special.expit(-xv),))


def gammaln(x):
    xv = value_of(x)
    return primitive(special.gammaln(xv), (x,), lambda g: (g * special.digamma(xv),))


# ------------------------------------------------------------------ structure

def vsum(x):
    xv = value_of(x)
    shape = np.shape(xv)
    return primitive(np.sum(xv), (x,), lambda g: (np.broadcast_to(g, shape),))


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(x, idx):
    xv = value_of(x)
    shape = np.shape(xv)
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return primitive(xv[idx], (x,), vjp)


def reshape(x, shape):
    xv = value_of(x)
    old = np.shape(xv)
    return primitive(np.reshape(xv, shape), (x,), lambda g: (np.reshape(g, old),))


def concatenate(xs, axis=-1):
    vals = [np.asarray(value_of(x)) for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return primitive(np.concatenate(vals, axis=axis), tuple(xs), vjp)


# ------------------------------------------------------------------ driver

class Tape:
    """Context manager that records every ``Var`` created inside it."""

    def __init__(self):
        self.nodes = []

    def append(self, node):
        self.nodes.append(node)

    def __enter__(self):
        self._prev = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False

    def backward(self, out: Var):
        out.grad = np.ones_like(out.value, dtype=float)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node.vjp is None:
                continue
            for parent, gp in zip(node.parents, node.vjp(g)):
                if gp is None:
                    continue
                parent.grad = gp if parent.grad is None else parent.grad + gp


def value_and_grad(fn, x, *args):
    """Evaluate ``fn(Var(x), *args)`` and return ``(value, d value / d x)``.

    Non-finite values are returned as they are; the gradient may then
    contain NaN and must not be used.
    """
    x = np.asarray(x, dtype=float)
    with Tape() as tape:
        leaf = Var(x)
        out = fn(leaf, *args)
    if not isinstance(out, Var):
        return float(out), np.zeros_like(x)
    with np.errstate(all="ignore"):
        tape.backward(out)
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(x)
    return float(out.value), np.array(grad, dtype=float).reshape(x.shape)


def grad(fn):
    """Return a function computing the gradient of ``fn``."""
    def g(x, *args):
        return value_and_grad(fn, x, *args)[1]
    return g
