"""Minimal reverse-mode differentiation over matrix-level operations.

A :class:`Tape` records a Wengert list of :class:`Node` objects.  Every op
below accepts either nodes or plain ``numpy`` arrays and returns the same
kind, so model code is written once and runs taped (training) or untaped
(teacher inference) depending on what the parameters are.

The op set is deliberately small: matmul, broadcast arithmetic, elementwise
nonlinearities, min/max, row softmax, row gather/concat/slice, and a total
sum.  ``backward`` walks the tape once in reverse creation order.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import UsageError


class Node:
    """One recorded value: an array, its parents, and their pullbacks."""

    __slots__ = ("tape", "value", "_parents", "_vjps", "_grad")

    # keep numpy from consuming us in mixed expressions; reflected ops run
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", value: np.ndarray, parents=(), vjps=()):
        self.tape = tape
        self.value = value
        self._parents = parents
        self._vjps = vjps
        self._grad = None

    @property
    def grad(self) -> np.ndarray:
        return self._grad if self._grad is not None else np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self) -> "Node":
        return transpose(self)

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)


class Tape:
    """Ordered record of differentiable operations for one evaluation."""

    def __init__(self):
        self._nodes: list[Node] = []

    def leaf(self, value) -> Node:
        """Register an input/parameter array as a differentiable leaf."""
        node = Node(self, np.asarray(value, dtype=np.float64))
        self._nodes.append(node)
        return node

    def _make(self, value, parents, vjps) -> Node:
        node = Node(self, value, parents, vjps)
        self._nodes.append(node)
        return node

    def __len__(self):
        return len(self._nodes)


def value_of(x) -> np.ndarray:
    """Raw array behind ``x`` whether taped or not."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, fwd, vjp_a: Callable, vjp_b: Callable):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = fwd(av, bv)
    if tape is None:
        return out
    parents, vjps = [], []
    if isinstance(a, Node):
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape))
    if isinstance(b, Node):
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape))
    return tape._make(out, tuple(parents), tuple(vjps))


def _unary(x, fwd, vjp: Callable):
    xv = value_of(x)
    out = fwd(xv)
    if not isinstance(x, Node):
        return out
    return x.tape._make(out, (x,), (lambda g: vjp(g, xv, out),))


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def matmul(a, b):
    return _binary(
        a, b, lambda x, y: x @ y, lambda g, x, y: g @ y.T, lambda g, x, y: x.T @ g
    )


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    return _binary(
        a,
        b,
        np.maximum,
        lambda g, x, y: g * (x >= y),
        lambda g, x, y: g * (x < y),
    )


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first argument."""
    return _binary(
        a,
        b,
        np.minimum,
        lambda g, x, y: g * (x <= y),
        lambda g, x, y: g * (x > y),
    )


def transpose(x):
    return _unary(x, lambda v: v.T, lambda g, v, out: g.T)


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v, out: g * (v > 0.0))


def sigmoid(x):
    def fwd(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    return _unary(x, fwd, lambda g, v, out: g * out * (1.0 - out))


def softplus(x):
    """log(1 + exp(x)), overflow-safe."""
    return _unary(
        x,
        lambda v: np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))),
        lambda g, v, out: g * value_of(sigmoid(v)),
    )


def absolute(x):
    return _unary(x, np.abs, lambda g, v, out: g * np.sign(v))


def power(x, exponent: float):
    """x ** exponent for a constant exponent."""
    e = float(exponent)
    return _unary(
        x,
        lambda v: v**e,
        lambda g, v, out: np.zeros_like(v) if e == 0.0 else g * e * v ** (e - 1.0),
    )


def softmax_rows(x):
    def fwd(v):
        shifted = v - v.max(axis=1, keepdims=True)
        ev = np.exp(shifted)
        return ev / ev.sum(axis=1, keepdims=True)

    def vjp(g, v, out):
        return (g - (g * out).sum(axis=1, keepdims=True)) * out

    return _unary(x, fwd, vjp)


def sum_all(x):
    return _unary(x, np.sum, lambda g, v, out: np.full_like(v, g))


def concat_rows(a, b):
    def vjp_a(g, x, y):
        return g[: x.shape[0]]

    def vjp_b(g, x, y):
        return g[x.shape[0] :]

    return _binary(a, b, lambda x, y: np.concatenate([x, y], axis=0), vjp_a, vjp_b)


def gather_rows(x, indices):
    idx = np.asarray(indices, dtype=np.intp)

    def vjp(g, v, out):
        acc = np.zeros_like(v)
        np.add.at(acc, idx, g)
        return acc

    return _unary(x, lambda v: v[idx], vjp)


def slice_cols(x, start: int, stop: int):
    def vjp(g, v, out):
        acc = np.zeros_like(v)
        acc[:, start:stop] = g
        return acc

    return _unary(x, lambda v: v[:, start:stop], vjp)


def backward(tape: Tape, loss: Node) -> None:
    """Accumulate gradients of a scalar ``loss`` into every tape node.

    Reverse topological order is creation order reversed; each node is
    visited exactly once.
    """
    if not isinstance(loss, Node) or loss.tape is not tape:
        raise UsageError("loss must be a node recorded on this tape")
    if np.size(loss.value) != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.value.shape}")
    for node in tape._nodes:
        node._grad = None
    loss._grad = np.ones_like(loss.value)
    for node in reversed(tape._nodes):
        if node._grad is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            contribution = vjp(node._grad)
            if parent._grad is None:
                parent._grad = np.zeros_like(parent.value)
            parent._grad = parent._grad + contribution


def grad_check(f, params: dict[str, np.ndarray], h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(params) -> (scalar value, {name: gradient})``; the finite-difference
    side only uses the value.  Relative error uses ``max(1e-8, |fd|)`` as
    denominator, maximized over every scalar entry of every tensor.
    """
    _, grads = f(params)
    worst = 0.0
    for name, tensor in params.items():
        analytic = np.asarray(grads[name])
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = float(f(params)[0])
            flat[i] = orig - h
            minus = float(f(params)[0])
            flat[i] = orig
            fd = (plus - minus) / (2.0 * h)
            err = abs(analytic.reshape(-1)[i] - fd) / max(1e-8, abs(fd))
            worst = max(worst, err)
    return worst
