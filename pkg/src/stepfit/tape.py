"""Reverse-mode automatic differentiation over a recorded scalar graph.

The tape records one node per scalar operation.  A node's *value* may be a
plain float or a 1-D numpy array: the array case batches the same scalar
graph over independent sample lanes, so the graph size stays independent of
the batch size while every recorded value is elementwise.

Primitives: add, sub, mul, div, neg, exp, log, tanh, relu, sigmoid, sqrt,
power, maximum (of two), asum (sum-reduce), logsumexp.  ``minimum`` and
``clamp`` are provided as compositions of those primitives.

The module-level helpers (``exp``, ``log``, ...) accept either a ``Var`` or
a plain number/array.  Code written against them runs identically in eager
mode (no tape) and in recording mode, and both paths execute the same
floating-point operations, so recorded values are bit-equal to eager ones.

Convention at kinks: ``relu`` and ``maximum`` take the right derivative,
i.e. ``relu'(0) = 1`` and ``maximum`` routes the gradient to its first
argument on ties.

A tape is single-threaded during recording and backward; independent tapes
may be used concurrently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "Gradients",
    "value",
    "is_var",
    "exp",
    "log",
    "tanh",
    "relu",
    "sigmoid",
    "sqrt",
    "power",
    "maximum",
    "minimum",
    "clamp",
    "asum",
    "logsumexp",
]

_ONE1 = (1.0,)
_ONE2 = (1.0, 1.0)
_SUB2 = (1.0, -1.0)
_NEG1 = (-1.0,)


def _sum_values(vals):
    """Left-fold sum. Shared by the eager and recorded paths."""
    acc = vals[0]
    for v in vals[1:]:
        acc = acc + v
    return acc


def _lse_values(vals):
    """Stable log-sum-exp via max subtraction. Shared by both paths."""
    m = vals[0]
    for v in vals[1:]:
        m = np.maximum(m, v)
    s = np.exp(vals[0] - m)
    for v in vals[1:]:
        s = s + np.exp(v - m)
    return m + np.log(s)


def _sigmoid_values(x):
    """Stable logistic function. Shared by both paths."""
    return np.where(
        np.asarray(x, dtype=float) >= 0.0,
        1.0 / (1.0 + np.exp(-np.abs(x))),
        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
    )[()]


class Var:
    """Handle to one recorded node. Immutable; cheap to copy."""

    __slots__ = ("tape", "i")

    # Make ndarray <op> Var defer to our reflected operators instead of
    # broadcasting the Var elementwise into an object array.
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", i: int):
        self.tape = tape
        self.i = i

    @property
    def value(self):
        return self.tape._values[self.i]

    def __repr__(self):
        return f"Var(i={self.i}, value={self.value!r})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        t = self.tape
        if isinstance(other, Var):
            t._check_tape(other)
            return t._record(t._values[self.i] + t._values[other.i], (self.i, other.i), _ONE2)
        return t._record(t._values[self.i] + other, (self.i,), _ONE1)

    __radd__ = __add__

    def __sub__(self, other):
        t = self.tape
        if isinstance(other, Var):
            t._check_tape(other)
            return t._record(t._values[self.i] - t._values[other.i], (self.i, other.i), _SUB2)
        return t._record(t._values[self.i] - other, (self.i,), _ONE1)

    def __rsub__(self, other):
        t = self.tape
        return t._record(other - t._values[self.i], (self.i,), _NEG1)

    def __mul__(self, other):
        t = self.tape
        if isinstance(other, Var):
            t._check_tape(other)
            a, b = t._values[self.i], t._values[other.i]
            return t._record(a * b, (self.i, other.i), (b, a))
        return t._record(t._values[self.i] * other, (self.i,), (other,))

    __rmul__ = __mul__

    def __truediv__(self, other):
        t = self.tape
        a = t._values[self.i]
        if isinstance(other, Var):
            t._check_tape(other)
            b = t._values[other.i]
            _require(np.all(b != 0.0), "division by zero")
            inv = 1.0 / b
            return t._record(a / b, (self.i, other.i), (inv, -a * inv * inv))
        _require(np.all(np.asarray(other) != 0.0), "division by zero")
        return t._record(a / other, (self.i,), (1.0 / other,))

    def __rtruediv__(self, other):
        t = self.tape
        b = t._values[self.i]
        _require(np.all(b != 0.0), "division by zero")
        inv = 1.0 / b
        return t._record(other / b, (self.i,), (-other * inv * inv,))

    def __neg__(self):
        t = self.tape
        return t._record(-t._values[self.i], (self.i,), _NEG1)

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("power exponent must be a plain number")
        t = self.tape
        a = t._values[self.i]
        if p == 2:
            return t._record(a**2, (self.i,), (2.0 * a,))
        _require(np.all(a > 0.0) or float(p) == int(p), "fractional power of non-positive base")
        return t._record(a**p, (self.i,), (p * a ** (p - 1),))


class Gradients:
    """Map from recorded nodes to gradients, produced by ``Tape.backward``.

    For a node whose value is a plain scalar but whose adjoint is an array
    (a weight shared across batch lanes), the lanes are summed, which is the
    gradient of the lane-weighted output the backward pass was seeded with.
    """

    def __init__(self, tape: "Tape", adjoints):
        self._tape = tape
        self._adj = adjoints

    def wrt(self, var: Var):
        self._tape._check_tape(var)
        a = self._adj[var.i] if var.i < len(self._adj) else 0.0
        if isinstance(self._tape._values[var.i], np.ndarray):
            if isinstance(a, np.ndarray) and a.ndim > 0:
                return a
            return np.full_like(self._tape._values[var.i], float(a))
        if isinstance(a, np.ndarray):
            return float(a.sum())
        return float(a)

    __getitem__ = wrt


class Tape:
    """Append-only record of scalar operations in construction order."""

    __slots__ = ("_values", "_parents", "_partials")

    def __init__(self):
        self._values = []
        self._parents = []
        self._partials = []

    def __len__(self):
        return len(self._values)

    def _check_tape(self, other: Var):
        if other.tape is not self:
            raise ValueError("operands live on different tapes")

    def _record(self, value, parents, partials):
        i = len(self._values)
        self._values.append(value)
        self._parents.append(parents)
        self._partials.append(partials)
        return Var(self, i)

    def leaf(self, value) -> Var:
        """Record an input node. ``value`` is a float or a 1-D lane array."""
        if isinstance(value, np.ndarray):
            value = np.asarray(value, dtype=float)
        else:
            value = float(value)
        return self._record(value, (), ())

    def backward(self, output: Var, seed=1.0) -> Gradients:
        """Accumulate adjoints from ``output`` back to the leaves.

        ``seed`` is the adjoint of ``output``: 1.0 differentiates the plain
        output; for a lane-array output, a scalar seed ``w`` differentiates
        ``w * sum(lanes)`` (so ``1/B`` gives the gradient of the lane mean).
        Nodes not reachable from ``output`` get gradient 0.
        """
        self._check_tape(output)
        n = output.i
        adj = [0.0] * (n + 1)
        adj[n] = seed
        values, parents, partials = self._values, self._parents, self._partials
        for i in range(n, -1, -1):
            a = adj[i]
            if type(a) is float and a == 0.0:
                continue
            ps = parents[i]
            if not ps:
                continue
            ds = partials[i]
            if ds is None:  # sum-reduce: all local partials are 1
                for p in ps:
                    adj[p] = adj[p] + a
            else:
                for p, d in zip(ps, ds):
                    adj[p] = adj[p] + d * a
        return Gradients(self, adj)


def _require(ok, msg):
    if not ok:
        from .errors import DomainError

        raise DomainError(msg)


def value(x):
    """Unwrap a Var to its recorded value; pass plain numbers through."""
    return x.value if isinstance(x, Var) else x


def is_var(x) -> bool:
    return isinstance(x, Var)


def exp(x):
    if isinstance(x, Var):
        t = x.tape
        v = np.exp(t._values[x.i])
        return t._record(v, (x.i,), (v,))
    return np.exp(x)


def log(x):
    if isinstance(x, Var):
        t = x.tape
        xv = t._values[x.i]
        _require(np.all(xv > 0.0), "log of non-positive value")
        return t._record(np.log(xv), (x.i,), (1.0 / xv,))
    return np.log(x)


def tanh(x):
    if isinstance(x, Var):
        t = x.tape
        v = np.tanh(t._values[x.i])
        return t._record(v, (x.i,), (1.0 - v * v,))
    return np.tanh(x)


def relu(x):
    if isinstance(x, Var):
        t = x.tape
        xv = t._values[x.i]
        return t._record(np.maximum(xv, 0.0), (x.i,), ((xv >= 0.0) * 1.0,))
    return np.maximum(x, 0.0)


def sigmoid(x):
    if isinstance(x, Var):
        t = x.tape
        v = _sigmoid_values(t._values[x.i])
        return t._record(v, (x.i,), (v * (1.0 - v),))
    return _sigmoid_values(x)


def sqrt(x):
    if isinstance(x, Var):
        t = x.tape
        xv = t._values[x.i]
        _require(np.all(xv > 0.0), "sqrt of non-positive value")
        v = np.sqrt(xv)
        return t._record(v, (x.i,), (0.5 / v,))
    return np.sqrt(x)


def power(x, p):
    if isinstance(x, Var):
        return x**p
    return x**p


def maximum(a, b):
    """Elementwise max of two operands; ties route the gradient to ``a``."""
    if isinstance(a, Var) and isinstance(b, Var):
        t = a.tape
        t._check_tape(b)
        av, bv = t._values[a.i], t._values[b.i]
        ga = (av >= bv) * 1.0
        return t._record(np.maximum(av, bv), (a.i, b.i), (ga, 1.0 - ga))
    if isinstance(a, Var):
        t = a.tape
        av = t._values[a.i]
        return t._record(np.maximum(av, b), (a.i,), ((av >= b) * 1.0,))
    if isinstance(b, Var):
        t = b.tape
        bv = t._values[b.i]
        return t._record(np.maximum(a, bv), (b.i,), ((a < bv) * 1.0,))
    return np.maximum(a, b)


def minimum(a, b):
    """Elementwise min, composed as -max(-a, -b); ties favour ``a``."""
    if isinstance(a, Var) or isinstance(b, Var):
        return -maximum(-a, -b)
    return np.minimum(a, b)


def clamp(x, lo, hi):
    """Clamp into [lo, hi]; gradient 0 in the clamped regions."""
    return minimum(maximum(x, lo), hi)


def asum(items):
    """Sum-reduce a sequence in the given order (left fold)."""
    items = list(items)
    if not items:
        raise ValueError("asum of an empty sequence")
    tracked = [x for x in items if isinstance(x, Var)]
    if not tracked:
        return _sum_values(items)
    t = tracked[0].tape
    for x in tracked[1:]:
        t._check_tape(x)
    v = _sum_values([value(x) for x in items])
    return t._record(v, tuple(x.i for x in tracked), None)


def logsumexp(items):
    """log(sum(exp(items))), stabilized; total over the whole sequence."""
    items = list(items)
    if not items:
        raise ValueError("logsumexp of an empty sequence")
    tracked = [x for x in items if isinstance(x, Var)]
    vals = [value(x) for x in items]
    if not tracked:
        return _lse_values(vals)
    t = tracked[0].tape
    for x in tracked[1:]:
        t._check_tape(x)
    v = _lse_values(vals)
    partials = tuple(np.exp(value(x) - v) for x in tracked)
    return t._record(v, tuple(x.i for x in tracked), partials)
