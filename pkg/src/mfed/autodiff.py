"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

A Graph records ops in insertion order; node inputs always reference earlier
nodes, so the list itself is a topological order and the backward pass is a
single reverse sweep that visits each node exactly once. Values are immutable
once recorded (arrays are marked read-only), which keeps the reverse pass
correct without defensive copies.

All reductions use numpy's fixed reduction order, so forward and backward are
bit-identical across runs and thread counts for identical inputs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(ValueError):
    """Raised when a tensor value contains NaN or Inf."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """Immutable node value in a Graph."""

    __slots__ = ("data", "node_id", "graph")

    def __init__(self, data: np.ndarray, node_id: int, graph: "Graph"):
        self.data = data
        self.node_id = node_id
        self.graph = graph

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


class _Node:
    __slots__ = ("input_ids", "vjp", "is_param")

    def __init__(self, input_ids: tuple[int, ...], vjp, is_param: bool):
        self.input_ids = input_ids
        self.vjp = vjp  # grad_out -> tuple of grads aligned with input_ids
        self.is_param = is_param


class Graph:
    """Append-only op tape; confined to one training thread."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._param_ids: list[int] = []
        self._leaf_shapes: dict[int, tuple[int, ...]] = {}

    def leaf(self, value, param: bool = True) -> Tensor:
        """Record a leaf tensor; param leaves receive gradients from backward."""
        data = _freeze(value)
        _check_finite(data, "leaf input")
        node_id = len(self.nodes)
        self.nodes.append(_Node((), None, param))
        self._leaf_shapes[node_id] = data.shape
        if param:
            self._param_ids.append(node_id)
        return Tensor(data, node_id, self)

    def constant(self, value) -> Tensor:
        return self.leaf(value, param=False)

    def param_ids(self) -> list[int]:
        return list(self._param_ids)

    def _record(self, op: str, inputs: Sequence[Tensor], value: np.ndarray,
                vjp: Callable) -> Tensor:
        for t in inputs:
            if t.graph is not self:
                raise ValueError(f"op {op}: input tensor belongs to a different graph")
        data = _freeze(value)
        _check_finite(data, f"output of op {op}")
        node_id = len(self.nodes)
        self.nodes.append(_Node(tuple(t.node_id for t in inputs), vjp, False))
        return Tensor(data, node_id, self)


def _as_tensor(g: Graph, x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return g.constant(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"op {op}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def add(a: Tensor, b) -> Tensor:
    g = a.graph
    b = _as_tensor(g, b)
    _broadcast_shape("add", a, b)
    value = a.data + b.data
    sa, sb = a.shape, b.shape

    def vjp(grad):
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)

    return g._record("add", (a, b), value, vjp)


def sub(a: Tensor, b) -> Tensor:
    g = a.graph
    b = _as_tensor(g, b)
    _broadcast_shape("sub", a, b)
    value = a.data - b.data
    sa, sb = a.shape, b.shape

    def vjp(grad):
        return _unbroadcast(grad, sa), _unbroadcast(-grad, sb)

    return g._record("sub", (a, b), value, vjp)


def mul(a: Tensor, b) -> Tensor:
    g = a.graph
    b = _as_tensor(g, b)
    _broadcast_shape("mul", a, b)
    value = a.data * b.data
    da, db = a.data, b.data

    def vjp(grad):
        return _unbroadcast(grad * db, da.shape), _unbroadcast(grad * da, db.shape)

    return g._record("mul", (a, b), value, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    g = a.graph
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"op matmul: expected 2-D operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"op matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}"
        )
    value = a.data @ b.data
    da, db = a.data, b.data

    def vjp(grad):
        return grad @ db.T, da.T @ grad

    return g._record("matmul", (a, b), value, vjp)


def relu(a: Tensor) -> Tensor:
    value = np.maximum(a.data, 0.0)
    da = a.data

    def vjp(grad):
        return (grad * (da > 0.0),)

    return a.graph._record("relu", (a,), value, vjp)


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)

    def vjp(grad):
        return (grad * (1.0 - value * value),)

    return a.graph._record("tanh", (a,), value, vjp)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    g = pred.graph
    target = _as_tensor(g, target)
    if pred.shape != target.shape:
        raise ValueError(
            f"op mse: pred shape {pred.shape} != target shape {target.shape}"
        )
    diff = pred.data - target.data
    value = np.asarray(np.mean(diff * diff))
    n = float(diff.size)

    def vjp(grad):
        gp = grad * (2.0 * diff / n)
        return gp, -gp

    return g._record("mse", (pred, target), value, vjp)


def sum_squares(a: Tensor) -> Tensor:
    """Sum of squared entries; scalar output."""
    value = np.asarray(np.sum(a.data * a.data))
    da = a.data

    def vjp(grad):
        return (grad * (2.0 * da),)

    return a.graph._record("sum_squares", (a,), value, vjp)


def softmax_cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Cross entropy of softmax(logits) against one-hot targets; scalar output.

    Softmax runs over the last axis; the result is the mean over all leading
    axes, so shapes [C], [B, C] and [B, P, C] are all accepted.
    """
    g = logits.graph
    targets = _as_tensor(g, targets)
    if logits.shape != targets.shape:
        raise ValueError(
            f"op softmax_cross_entropy: logits shape {logits.shape} != "
            f"targets shape {targets.shape}"
        )
    row_sums = targets.data.sum(axis=-1)
    if not np.allclose(row_sums, 1.0, atol=1e-9):
        raise ValueError("op softmax_cross_entropy: targets rows must sum to 1")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    log_p = shifted - log_z
    per_row = -(targets.data * log_p).sum(axis=-1)
    value = np.asarray(np.mean(per_row))
    n_rows = float(per_row.size)
    softmax = np.exp(log_p)
    tdata = targets.data

    def vjp(grad):
        gl = grad * ((softmax - tdata) / n_rows)
        return gl, grad * (-log_p / n_rows)

    return g._record("softmax_cross_entropy", (logits, targets), value, vjp)


def backward(graph: Graph, root: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar root with respect to every param leaf.

    Returns a map node_id -> gradient array. Gradients accumulate by sum
    across fan-out; param leaves not reachable from the root get zeros.
    Visits nodes exactly once, in reverse insertion order.
    """
    if root.graph is not graph:
        raise ValueError("root tensor does not belong to the given graph")
    if root.data.ndim != 0:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    grads: list[np.ndarray | None] = [None] * len(graph.nodes)
    grads[root.node_id] = np.asarray(1.0)
    for node_id in range(root.node_id, -1, -1):
        gout = grads[node_id]
        node = graph.nodes[node_id]
        if gout is None or node.vjp is None:
            continue
        input_grads = node.vjp(gout)
        for in_id, ig in zip(node.input_ids, input_grads):
            if grads[in_id] is None:
                grads[in_id] = ig
            else:
                grads[in_id] = grads[in_id] + ig
    out: dict[int, np.ndarray] = {}
    for pid in graph.param_ids():
        gp = grads[pid]
        if gp is None:
            gp = np.zeros(graph._leaf_shapes[pid], dtype=np.float64)
        _check_finite(np.asarray(gp), "backward gradient")
        out[pid] = np.asarray(gp)
    return out
