"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Arrays are plain numpy; every op records its parents and a closure mapping
the output gradient to one gradient per parent. ``backward`` walks the
recorded graph in reverse topological order and accumulates into the
``grad`` field of leaf tensors that require gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, InputError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, *, op="leaf", parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward_fn
        # only leaves hold a persistent gradient buffer
        self.grad = np.zeros_like(self.data) if (self.requires_grad and not parents) else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward_fn):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, rg, op=op, parents=parents, backward_fn=backward_fn if rg else None)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward_fn(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), "matmul", backward_fn)


def _check_broadcast(a_shape, b_shape):
    """Accept equal shapes, scalars, and one value per channel (last axis)."""
    if a_shape == b_shape:
        return
    for big, small in ((a_shape, b_shape), (b_shape, a_shape)):
        if len(small) == 0 or small == (1,):
            return
        if len(big) == 2 and small in ((big[1],), (1, big[1])):
            return
    raise DimensionError(f"elementwise: shapes {a_shape} and {b_shape} do not broadcast")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def elementwise(a, b, kind):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    A, B = a.data, b.data
    sa, sb = a.shape, b.shape
    if kind == "add":
        out = A + B

        def backward_fn(g):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)
    elif kind == "sub":
        out = A - B

        def backward_fn(g):
            return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    elif kind == "mul":
        out = A * B

        def backward_fn(g):
            return _unbroadcast(g * B, sa), _unbroadcast(g * A, sb)
    else:
        raise InputError(f"unknown elementwise kind {kind!r}")
    return _make(out, (a, b), kind, backward_fn)


def add(a, b):
    return elementwise(a, b, "add")


def sub(a, b):
    return elementwise(a, b, "sub")


def mul(a, b):
    return elementwise(a, b, "mul")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0.0

    def backward_fn(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), "relu", backward_fn)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward_fn(g):
        return (g * out,)

    return _make(out, (a,), "exp", backward_fn)


def softplus(a):
    """log(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    x = a.data

    def backward_fn(g):
        # sigmoid via tanh stays finite for large |x|
        return (g * 0.5 * (1.0 + np.tanh(0.5 * x)),)

    return _make(np.logaddexp(0.0, x), (a,), "softplus", backward_fn)


def total(a):
    """Sum of all entries as a scalar tensor."""
    a = as_tensor(a)
    shape = a.shape

    def backward_fn(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(), (a,), "sum", backward_fn)


def sum_sq_diff(a, b):
    """Squared Euclidean distance between ``a`` and a constant target ``b``."""
    a = as_tensor(a)
    target = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=DTYPE)
    if a.shape != target.shape:
        raise DimensionError(f"sum_sq_diff: shapes {a.shape} and {target.shape} differ")
    diff = a.data - target

    def backward_fn(g):
        return (2.0 * g * diff,)

    return _make(np.sum(diff * diff), (a,), "sum_sq_diff", backward_fn)


def log_softmax(x):
    """Row-wise log-softmax of a plain array (no graph)."""
    x = np.asarray(x, dtype=DTYPE)
    m = np.max(x, axis=1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy of ``logits`` [B x K] against integer ``labels``.

    Returns ``(loss, per_sample)`` where ``loss`` is a scalar tensor and
    ``per_sample`` a float array of the B individual losses.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    n, k = logits.shape
    if n < 1:
        raise InputError("softmax_cross_entropy: empty batch")
    if labels.shape != (n,):
        raise DimensionError(f"softmax_cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    labels = labels.astype(np.int64)
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    per_sample = -logp[rows, labels]

    def backward_fn(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)

    loss = _make(per_sample.mean(), (logits,), "softmax_cross_entropy", backward_fn)
    return loss, per_sample


@dataclass
class Graph:
    """Topologically ordered record of the ops leading to one output."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss, graph=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every trainable leaf."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if graph is None:
        graph = Graph.from_output(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is not None:
                node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
