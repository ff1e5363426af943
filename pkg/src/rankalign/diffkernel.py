"""Reverse-mode automatic differentiation over named scalar parameters.

Expressions are built from numpy-backed graph nodes, so a whole score
vector or permutation matrix is one node rather than a web of scalars.
Gradients come back as a plain dict keyed by parameter name, which keeps
the optimizer and the finite-difference checks independent of any array
layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "ParameterSet",
    "Node",
    "ParamContext",
    "DiffValue",
    "constant",
    "exp",
    "log",
    "absolute",
    "maximum",
    "sigmoid",
    "log_sigmoid",
    "tanh",
    "softmax",
    "logsumexp",
    "matvec",
    "stack",
    "evaluate",
    "evaluate_with_gradient",
    "finite_difference_gradient",
]


class DomainError(ValueError):
    """An operation was applied outside its documented domain."""


class ParameterSet:
    """Ordered mapping from parameter name to float value.

    Mutation goes through ``__setitem__``/``update`` only; each mutation
    bumps ``version`` so callers can detect staleness. Iteration order is
    insertion order, which fixes the reduction order everywhere downstream.
    """

    def __init__(self, values: Mapping[str, float] | Iterable[tuple[str, float]] = ()):
        items = values.items() if isinstance(values, Mapping) else values
        self._values: dict[str, float] = {str(k): float(v) for k, v in items}
        self._version = 0

    @property
    def version(self) -> int:
        return self._version

    def ids(self) -> tuple[str, ...]:
        return tuple(self._values)

    def as_dict(self) -> dict[str, float]:
        return dict(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> float:
        return self._values[name]

    def __setitem__(self, name: str, value: float) -> None:
        self._values[str(name)] = float(value)
        self._version += 1

    def update(self, values: Mapping[str, float]) -> None:
        for k, v in values.items():
            self._values[str(k)] = float(v)
        self._version += 1

    def copy(self) -> "ParameterSet":
        return ParameterSet(self._values)

    def __repr__(self) -> str:
        return f"ParameterSet({len(self._values)} params, version={self._version})"


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One value in an expression graph: a float64 array plus backward rule.

    `_backward` maps the gradient at this node to gradients for each parent,
    aligned with `_parents`. Leaves have no parents.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        parents: tuple["Node", ...] = (),
        backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Node":
        other = _wrap(other)
        a, b = self, other
        return Node(
            a.data + b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Node":
        return Node(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Node":
        return self + (-_wrap(other))

    def __rsub__(self, other) -> "Node":
        return _wrap(other) + (-self)

    def __mul__(self, other) -> "Node":
        other = _wrap(other)
        a, b = self, other
        return Node(
            a.data * b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Node":
        other = _wrap(other)
        a, b = self, other
        if np.any(b.data == 0.0):
            raise DomainError("division by zero")
        out = a.data / b.data
        return Node(
            out,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * out / b.data, b.data.shape),
            ),
        )

    def __rtruediv__(self, other) -> "Node":
        return _wrap(other) / self

    def __pow__(self, exponent) -> "Node":
        # Constant exponent only; fractional powers need a positive base.
        c = float(exponent)
        if c != int(c) and np.any(self.data < 0.0):
            raise DomainError("fractional power of a negative base")
        out = self.data**c
        return Node(out, (self,), lambda g: (g * c * self.data ** (c - 1.0),))

    # -- shape manipulation --------------------------------------------------

    def __getitem__(self, index) -> "Node":
        src = self

        def backward(g: np.ndarray) -> tuple[np.ndarray]:
            full = np.zeros_like(src.data)
            np.add.at(full, index, g)
            return (full,)

        return Node(src.data[index], (src,), backward)

    def reshape(self, shape) -> "Node":
        src = self
        return Node(src.data.reshape(shape), (src,), lambda g: (g.reshape(src.data.shape),))

    def sum(self, axis=None, keepdims: bool = False) -> "Node":
        src = self

        def backward(g: np.ndarray) -> tuple[np.ndarray]:
            if axis is None:
                return (np.broadcast_to(g, src.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, src.data.shape).copy(),)

        return Node(src.data.sum(axis=axis, keepdims=keepdims), (src,), backward)

    def mean(self, axis=None) -> "Node":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) / float(n)

    def __repr__(self) -> str:
        return f"Node(shape={self.data.shape}, leaf={self._backward is None})"


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    """Wrap an array or scalar as a graph leaf that receives no gradient."""
    return Node(x)


# -- elementwise functions ----------------------------------------------------


def exp(x: Node) -> Node:
    x = _wrap(x)
    if np.any(x.data > 709.0):
        raise DomainError("exp argument above overflow threshold")
    out = np.exp(x.data)
    return Node(out, (x,), lambda g: (g * out,))


def log(x: Node) -> Node:
    x = _wrap(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log of a non-positive value")
    return Node(np.log(x.data), (x,), lambda g: (g / x.data,))


def absolute(x: Node) -> Node:
    """|x| with subgradient 0 at 0."""
    x = _wrap(x)
    return Node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def maximum(a, b) -> Node:
    """Elementwise max; on ties the gradient goes to the second argument."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data > b.data
    return Node(
        np.maximum(a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        ),
    )


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    # Both branches exponentiate -|x|, so neither can overflow.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Node) -> Node:
    x = _wrap(x)
    s = _sigmoid_array(x.data)
    return Node(s, (x,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(x: Node) -> Node:
    """log(sigmoid(x)) computed as -log(1 + exp(-x)) without overflow."""
    x = _wrap(x)
    out = -np.logaddexp(0.0, -x.data)
    return Node(out, (x,), lambda g: (g * _sigmoid_array(-x.data),))


def tanh(x: Node) -> Node:
    x = _wrap(x)
    t = np.tanh(x.data)
    return Node(t, (x,), lambda g: (g * (1.0 - t * t),))


def softmax(x: Node, axis: int = -1) -> Node:
    """Stable softmax along `axis` (max-shifted before exponentiation)."""
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return Node(p, (x,), backward)


def logsumexp(x: Node, axis: int | None = None) -> Node:
    """Stable log-sum-exp; gradient is the softmax of `x` along `axis`."""
    x = _wrap(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    p = e / s
    if axis is None:
        return Node((m + np.log(s)).reshape(()), (x,), lambda g: (g * p,))
    out = (m + np.log(s)).squeeze(axis=axis)
    return Node(out, (x,), lambda g: (np.expand_dims(g, axis) * p,))


def matvec(m, v) -> Node:
    """Matrix-vector product; either side may be a constant."""
    m, v = _wrap(m), _wrap(v)
    return Node(
        m.data @ v.data,
        (m, v),
        lambda g: (np.outer(g, v.data), m.data.T @ g),
    )


def stack(nodes: Sequence[Node]) -> Node:
    """Stack scalar or equal-shape nodes along a new leading axis."""
    nodes = tuple(_wrap(n) for n in nodes)
    data = np.stack([n.data for n in nodes])
    return Node(data, nodes, lambda g: tuple(g[i] for i in range(len(nodes))))


# -- evaluation ---------------------------------------------------------------


@dataclass
class DiffValue:
    """A scalar expression value with its gradient by parameter name."""

    value: float
    gradient: dict[str, float]


class ParamContext:
    """Builds graph leaves bound to a ParameterSet during one evaluation."""

    def __init__(self, params: ParameterSet):
        self.params = params
        self._leaves: list[tuple[tuple[str, ...], Node]] = []

    def scalar(self, name: str) -> Node:
        node = Node(self.params[name])
        self._leaves.append(((name,), node))
        return node

    def __getitem__(self, name: str) -> Node:
        return self.scalar(name)

    def vector(self, names: Sequence[str]) -> Node:
        names = tuple(names)
        node = Node(np.array([self.params[n] for n in names]))
        self._leaves.append((names, node))
        return node

    def collect_gradient(self) -> dict[str, float]:
        grads = {name: 0.0 for name in self.params.ids()}
        for names, node in self._leaves:
            if node.grad is None:
                continue
            flat = np.atleast_1d(node.grad)
            for name, g in zip(names, flat):
                grads[name] += float(g)
        return grads


def _backward_pass(root: Node) -> None:
    # Iterative topological order; training graphs are deep enough that
    # recursion would be fragile.
    order: list[Node] = []
    seen: set[int] = set()
    todo: list[tuple[Node, bool]] = [(root, False)]
    while todo:
        node, expanded = todo.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        todo.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                todo.append((parent, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g


Expression = Callable[[ParamContext], Node]


def evaluate(expr: Expression, params: ParameterSet) -> float:
    """Forward-only evaluation of `expr` at the current parameter values."""
    out = expr(ParamContext(params))
    if out.data.shape != ():
        raise ValueError("expression must evaluate to a scalar")
    return float(out.data)


def evaluate_with_gradient(expr: Expression, params: ParameterSet) -> DiffValue:
    """Evaluate `expr` and differentiate it with respect to every parameter.

    The gradient dict always covers all parameter names; parameters the
    expression never touches get 0.
    """
    ctx = ParamContext(params)
    out = expr(ctx)
    if out.data.shape != ():
        raise ValueError("expression must evaluate to a scalar")
    value = float(out.data)
    if not np.isfinite(value):
        raise DomainError("expression value is not finite")
    _backward_pass(out)
    return DiffValue(value, ctx.collect_gradient())


def finite_difference_gradient(
    expr: Expression, params: ParameterSet, step: float | None = None
) -> dict[str, float]:
    """Central-difference gradient, one parameter at a time.

    With `step=None` each parameter uses 1e-6 * max(1, |value|).
    """
    if step is not None and step <= 0:
        raise ValueError("step must be positive")
    grads: dict[str, float] = {}
    for name in params.ids():
        v0 = params[name]
        h = step if step is not None else 1e-6 * max(1.0, abs(v0))
        params[name] = v0 + h
        hi = evaluate(expr, params)
        params[name] = v0 - h
        lo = evaluate(expr, params)
        params[name] = v0
        grads[name] = (hi - lo) / (2.0 * h)
    return grads
