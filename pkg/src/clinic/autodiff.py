"""Minimal reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D (rows, cols) matrix: row vectors are 1 x n and scalars
are 1 x 1. The graph is rebuilt on every forward pass (define-by-run);
``backward`` visits it once in reverse topological order and accumulates
gradients into ``Node.grad``, so calling it twice without zeroing doubles the
gradients exactly.

Only the operations needed for MLPs, softmax cross-entropy, and the
contrastive regularizer are provided. All reductions over "a row" act on each
row of the operand, which covers the single-row case.
"""
from __future__ import annotations

import itertools

import numpy as np

Tensor = np.ndarray

_IDS = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""


def tensor(values) -> Tensor:
    """Coerce to a 2-D float64 matrix (1-D input becomes a row vector)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Node:
    """One vertex of the computation graph.

    ``op`` is "leaf" for trainable parameters and "const" for inputs that
    receive no gradient map entry; everything else is named after the
    operation that produced it.
    """

    __slots__ = ("id", "op", "parents", "value", "grad", "_vjp")

    def __init__(self, value, parents=(), op="leaf", vjp=None):
        self.value = tensor(value)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        self._vjp = vjp
        self.id = next(_IDS)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


def leaf(values) -> Node:
    """A trainable parameter leaf; shares memory with ``values`` if 2-D float64."""
    return Node(values, op="leaf")


def constant(values) -> Node:
    """A non-trainable input; excluded from backward()'s gradient map."""
    return Node(values, op="const")


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _require_same_shape(op: str, a: Node, b: Node) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def matmul(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions of {a.value.shape} and {b.value.shape} do not match"
        )
    out_value = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Node(out_value, (a, b), "matmul", vjp)


def transpose(a: Node) -> Node:
    a = _as_node(a)
    return Node(a.value.T, (a,), "transpose", lambda g: (g.T,))


def add(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _require_same_shape("add", a, b)
    return Node(a.value + b.value, (a, b), "add", lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _require_same_shape("sub", a, b)
    return Node(a.value - b.value, (a, b), "sub", lambda g: (g, -g))


def add_rowvec(a: Node, b: Node) -> Node:
    """Broadcast-add a 1 x m row vector to every row of an n x m matrix."""
    a, b = _as_node(a), _as_node(b)
    if b.value.shape != (1, a.value.shape[1]):
        raise ShapeError(
            f"add_rowvec: matrix {a.value.shape} needs a (1, {a.value.shape[1]}) "
            f"row vector, got {b.value.shape}"
        )
    return Node(
        a.value + b.value, (a, b), "add_rowvec",
        lambda g: (g, g.sum(axis=0, keepdims=True)),
    )


def mul(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _require_same_shape("mul", a, b)
    return Node(
        a.value * b.value, (a, b), "mul",
        lambda g: (g * b.value, g * a.value),
    )


def scale(a: Node, c: float) -> Node:
    a = _as_node(a)
    c = float(c)
    return Node(a.value * c, (a,), "scale", lambda g: (g * c,))


def leaky_relu(a: Node, alpha: float = 0.01) -> Node:
    a = _as_node(a)
    slope = np.where(a.value > 0.0, 1.0, alpha)
    return Node(a.value * slope, (a,), "leaky_relu", lambda g: (g * slope,))


def tanh(a: Node) -> Node:
    a = _as_node(a)
    t = np.tanh(a.value)
    return Node(t, (a,), "tanh", lambda g: (g * (1.0 - t * t),))


def concat_rows(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.value.shape[1] != b.value.shape[1]:
        raise ShapeError(
            f"concat_rows: column counts of {a.value.shape} and {b.value.shape} differ"
        )
    n = a.value.shape[0]
    return Node(
        np.vstack([a.value, b.value]), (a, b), "concat_rows",
        lambda g: (g[:n], g[n:]),
    )


def row_dot(a: Node, b: Node) -> Node:
    """Per-row dot products of two equally shaped matrices, as an n x 1 column."""
    a, b = _as_node(a), _as_node(b)
    _require_same_shape("row_dot", a, b)
    out = np.sum(a.value * b.value, axis=1, keepdims=True)
    return Node(out, (a, b), "row_dot", lambda g: (g * b.value, g * a.value))


def _softmax(values: Tensor) -> Tensor:
    shifted = values - values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_sum_exp(a: Node) -> Node:
    """Overflow-safe log(sum(exp(row))), one output per row."""
    a = _as_node(a)
    m = a.value.max(axis=1, keepdims=True)
    out = m + np.log(np.exp(a.value - m).sum(axis=1, keepdims=True))
    return Node(out, (a,), "log_sum_exp", lambda g: (g * _softmax(a.value),))


def masked_log_sum_exp(a: Node, mask) -> Node:
    """log(sum over masked entries of exp(row)); rows with empty masks yield 0.

    ``mask`` is a constant boolean matrix of the operand's shape. Masked-out
    entries contribute nothing to the value or the gradient, and the result
    stays finite for every row.
    """
    a = _as_node(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.value.shape:
        raise ShapeError(
            f"masked_log_sum_exp: mask {mask.shape} does not match operand {a.value.shape}"
        )
    any_row = mask.any(axis=1, keepdims=True)
    neg_fill = np.where(mask, a.value, -np.inf)
    m = np.where(any_row, neg_fill.max(axis=1, keepdims=True), 0.0)
    # exp(-inf) = 0 exactly, so masked-out entries never overflow
    e = np.exp(np.where(mask, a.value - m, -np.inf))
    total = e.sum(axis=1, keepdims=True)
    out = np.where(any_row, m + np.log(np.where(any_row, total, 1.0)), 0.0)

    def vjp(g):
        weights = np.where(any_row, e / np.where(total > 0.0, total, 1.0), 0.0)
        return (g * weights,)

    return Node(out, (a,), "masked_log_sum_exp", vjp)


def softmax(a: Node) -> Node:
    a = _as_node(a)
    s = _softmax(a.value)

    def vjp(g):
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return Node(s, (a,), "softmax", vjp)


def mean(a: Node) -> Node:
    a = _as_node(a)
    inv = 1.0 / a.value.size
    return Node(
        np.array([[a.value.mean()]]), (a,), "mean",
        lambda g: (np.full_like(a.value, g[0, 0] * inv),),
    )


def sum_all(a: Node) -> Node:
    a = _as_node(a)
    return Node(
        np.array([[a.value.sum()]]), (a,), "sum",
        lambda g: (np.full_like(a.value, g[0, 0]),),
    )


def pick(a: Node, cols) -> Node:
    """Select one entry per row: out[i] = a[i, cols[i]], as an n x 1 column."""
    a = _as_node(a)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    n = a.value.shape[0]
    if cols.shape[0] != n:
        raise ShapeError(f"pick: {n} rows but {cols.shape[0]} column indices")
    if cols.min(initial=0) < 0 or cols.max(initial=0) >= a.value.shape[1]:
        raise IndexError(f"pick: column index out of range for shape {a.value.shape}")
    rows = np.arange(n)
    out = a.value[rows, cols].reshape(n, 1)

    def vjp(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, (rows, cols), g[:, 0])
        return (ga,)

    return Node(out, (a,), "pick", vjp)


def l2_normalize_rows(a: Node) -> Node:
    """Scale every row to unit Euclidean norm; a zero row is an error."""
    a = _as_node(a)
    norms = np.linalg.norm(a.value, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms[:, 0] == 0.0)[0])
        raise ValueError(f"l2_normalize_rows: row {bad} has zero norm")
    out = a.value / norms

    def vjp(g):
        return ((g - out * np.sum(g * out, axis=1, keepdims=True)) / norms,)

    return Node(out, (a,), "l2_normalize_rows", vjp)


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    return order


def backward(root: Node) -> dict[Node, Tensor]:
    """Accumulate d(root)/d(node) into every node's grad; root must be scalar.

    Returns a map from every parameter leaf in the graph to its (accumulated)
    gradient. Gradients add across calls; use ``zero_grad`` between steps.
    """
    if root.value.shape != (1, 1):
        raise ValueError(f"backward root must be 1x1 scalar, got shape {root.value.shape}")
    order = _topological(root)
    adjoint: dict[int, Tensor] = {root.id: np.ones((1, 1))}
    leaves: dict[Node, Tensor] = {}
    for node in reversed(order):
        g = adjoint.pop(node.id, None)
        if g is None:
            continue
        node.grad = node.grad + g
        if node.op == "leaf":
            leaves[node] = node.grad
        if node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None:
                continue
            acc = adjoint.get(parent.id)
            adjoint[parent.id] = pg if acc is None else acc + pg
    return leaves


def zero_grad(root: Node) -> None:
    """Reset grads of every node reachable from ``root``."""
    for node in _topological(root):
        node.grad = np.zeros_like(node.value)
