"""Reverse-mode differentiation over 2-D float64 arrays.

Every value is a matrix; scalars are 1x1. A :class:`Node` records its parents
and a closure mapping the incoming adjoint to one adjoint per parent. Leaves
created with ``requires_grad=True`` are the parameters gradients are reported
for; constants and :func:`detach`-ed nodes stop the backward sweep.

Example::

    W = Node(np.ones((2, 3)), requires_grad=True, name="W")
    loss = sum_all(mul(detach(W), W))
    grads = backward(loss)  # grads[W] == W.value
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics

__all__ = [
    "Node", "ParamGroup", "constant", "detach", "backward", "grad_check",
    "matmul", "transpose", "linear", "add", "sub", "mul", "scale", "neg", "relu", "exp", "softplus",
    "concat_cols", "slice_cols", "log_softmax_rows", "logsumexp_rows",
    "logaddexp", "pick", "sum_all", "sum_rows", "sum_cols", "mean_all",
]


class Node:
    __slots__ = ("value", "parents", "grad_fn", "requires_grad", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), grad_fn=None,
                 requires_grad: bool = False, name: str | None = None):
        self.value = numerics.as_matrix(value, name or "value")
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Node:
    if isinstance(x, Node):
        return x
    return constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))


def constant(value) -> Node:
    return Node(value)


def detach(x: Node) -> Node:
    """Same value (the very same array), no gradient path back to ``x``."""
    out = Node.__new__(Node)
    out.value = x.value
    out.parents = ()
    out.grad_fn = None
    out.requires_grad = False
    out.name = x.name
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _make(value, parents, grad_fn) -> Node:
    return Node(value, parents, grad_fn)


# -- ops ---------------------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    value = numerics.matmul(a.value, b.value)
    return _make(value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a: Node) -> Node:
    return _make(a.value.T, (a,), lambda g: (g.T,))


def linear(x: Node, w: Node, b: Node) -> Node:
    """``x @ w.T + b`` for an ``out x in`` weight and a ``1 x out`` bias."""
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"cannot apply {w.shape} weight to {x.shape} input")
    value = x.value @ w.value.T + b.value
    return _make(value, (x, w, b),
                 lambda g: (g @ w.value, g.T @ x.value, g.sum(axis=0, keepdims=True)))


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; a 1-row or 1-column operand is broadcast."""
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    return _make(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, sa), _unbroadcast(g * a.value, sb)))


def scale(a: Node, c: float) -> Node:
    return _make(c * a.value, (a,), lambda g: (c * g,))


def neg(a: Node) -> Node:
    return _make(-a.value, (a,), lambda g: (-g,))


def relu(a: Node) -> Node:
    mask = a.value > 0.0  # subgradient 0 at exactly 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Node) -> Node:
    e = np.exp(a.value)
    return _make(e, (a,), lambda g: (g * e,))


def softplus(a: Node) -> Node:
    return _make(numerics.softplus(a.value), (a,),
                 lambda g: (g * numerics.sigmoid(a.value),))


def concat_cols(a: Node, b: Node) -> Node:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row mismatch in concat: {a.shape} vs {b.shape}")
    k = a.shape[1]
    return _make(np.hstack([a.value, b.value]), (a, b),
                 lambda g: (g[:, :k], g[:, k:]))


def slice_cols(a: Node, start: int, stop: int) -> Node:
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _make(a.value[:, start:stop], (a,), grad_fn)


def log_softmax_rows(a: Node) -> Node:
    out = numerics.log_softmax_rows(a.value)
    p = np.exp(out)
    return _make(out, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def logsumexp_rows(a: Node) -> Node:
    lse = numerics.logsumexp_rows(a.value)
    p = np.exp(a.value - lse)
    return _make(lse, (a,), lambda g: (g * p,))


def logaddexp(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"logaddexp shape mismatch: {a.shape} vs {b.shape}")
    out = np.logaddexp(a.value, b.value)
    wa = np.exp(a.value - out)
    wb = np.exp(b.value - out)
    return _make(out, (a, b), lambda g: (g * wa, g * wb))


def pick(a: Node, index) -> Node:
    """Column ``index[i]`` of row ``i``, as a B x 1 column."""
    idx = np.asarray(index, dtype=np.intp)
    if idx.shape != (a.shape[0],):
        raise ValueError(f"need one index per row ({a.shape[0]}), got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ValueError(f"index out of range [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[rows, idx] = g[:, 0]
        return (full,)

    return _make(a.value[rows, idx][:, None], (a,), grad_fn)


def sum_all(a: Node) -> Node:
    shape = a.shape
    return _make(np.array([[a.value.sum()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0]),))


def sum_rows(a: Node) -> Node:
    """Sum across each row (B x n -> B x 1)."""
    n = a.shape[1]
    return _make(a.value.sum(axis=1, keepdims=True), (a,),
                 lambda g: (np.repeat(g, n, axis=1),))


def sum_cols(a: Node) -> Node:
    """Sum down each column (B x n -> 1 x n)."""
    b = a.shape[0]
    return _make(a.value.sum(axis=0, keepdims=True), (a,),
                 lambda g: (np.repeat(g, b, axis=0),))


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


# -- backward ----------------------------------------------------------------

def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, wrt: Sequence[Node] | None = None) -> dict[Node, np.ndarray]:
    """Gradients of the scalar ``loss`` w.r.t. every leaf that requires grad.

    Leaves listed in ``wrt`` but unreachable from ``loss`` get zero gradients.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    adj: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    grads: dict[Node, np.ndarray] = {}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                grads[node] = g
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adj:
                    adj[key] = adj[key] + pg
                else:
                    adj[key] = pg
    for leaf in wrt or ():
        if leaf not in grads:
            grads[leaf] = np.zeros(leaf.shape)
    return grads


@dataclass
class ParamGroup:
    """A labelled set of parameter names updated together."""

    label: str
    names: list[str] = field(default_factory=list)

    LABELS = ("feature-extractor", "classifiers", "discriminator")

    def __post_init__(self):
        if self.label not in self.LABELS:
            raise ValueError(f"unknown parameter group {self.label!r}")


def grad_check(f: Callable[[Mapping[str, Node]], Node], params: Mapping[str, np.ndarray],
               step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a dict of nodes (same keys as ``params``) to a scalar node.
    Error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaves = {k: Node(np.array(v, dtype=np.float64), requires_grad=True, name=k)
              for k, v in params.items()}
    grads = backward(f(leaves), wrt=list(leaves.values()))

    def value_at(k, perturbed):
        arrays = {j: (perturbed if j == k else leaves[j].value) for j in leaves}
        return f({j: constant(a) for j, a in arrays.items()}).item()

    worst = 0.0
    for k, leaf in leaves.items():
        base = leaf.value
        for idx in np.ndindex(base.shape):
            w = base.copy()
            w[idx] = base[idx] + step
            up = value_at(k, w)
            w[idx] = base[idx] - step
            down = value_at(k, w)
            numeric = (up - down) / (2.0 * step)
            err = abs(grads[leaf][idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
