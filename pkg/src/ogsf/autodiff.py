"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A Tensor wraps an ndarray plus the graph bookkeeping needed for backward().
Primitives are plain functions that build graph nodes; `apply_primitive`
dispatches them by name for callers that drive the engine generically.
Everything runs in float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to a primitive's contract."""


class UnsupportedPrimitiveError(ValueError):
    """apply_primitive was asked for a kind it does not know."""


class GraphError(RuntimeError):
    """Computation-graph misuse, e.g. a second backward through a consumed graph."""


class Tensor:
    """Dense float64 array participating in a reverse-mode differentiation graph.

    `grad` is populated by backward(); `requires_grad` marks trainable leaves.
    Graph edges live in `_parents`; `_backward` pushes the node's output
    gradient to its parents.
    """

    def __init__(self, data, requires_grad=False, op=None, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._op = op
        self._parents = tuple(parents)
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def __repr__(self):
        tag = self._op or ("param" if self.requires_grad else "const")
        return f"Tensor(shape={self.data.shape}, op={tag})"

    # Operator sugar; python scalars go through `scale` to keep graphs small.
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def _scalar_error(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.data.shape}")


def as_tensor(x):
    """Wrap arrays/scalars as constant Tensors; pass Tensors through."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None
    out = Tensor(out_data, op="add", parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward = backward
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None
    out = Tensor(out_data, op="mul", parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = backward
    return out


def matmul(a, b):
    """Matrix product. `b` must be 2-D; `a` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")
    out = Tensor(a.data @ b.data, op="matmul", parents=(a, b))

    def backward(g):
        _accumulate(a, g @ b.data.T)
        lead = tuple(range(a.ndim - 1))
        _accumulate(b, np.tensordot(a.data, g, axes=(lead, lead)))

    out._backward = backward
    return out


def concat(tensors):
    """Concatenate along the last axis."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: needs at least one input")
    lead = ts[0].data.shape[:-1]
    for t in ts[1:]:
        if t.data.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ, {[t.data.shape for t in ts]}")
    out = Tensor(np.concatenate([t.data for t in ts], axis=-1), op="concat", parents=ts)
    widths = [t.data.shape[-1] for t in ts]

    def backward(g):
        offset = 0
        for t, w in zip(ts, widths):
            _accumulate(t, g[..., offset:offset + w])
            offset += w

    out._backward = backward
    return out


def leaky_relu(x, slope=0.1):
    x = as_tensor(x)
    out = Tensor(np.where(x.data >= 0, x.data, slope * x.data), op="leaky-relu", parents=(x,))

    def backward(g):
        _accumulate(x, g * np.where(x.data >= 0, 1.0, slope))

    out._backward = backward
    return out


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s, op="sigmoid", parents=(x,))

    def backward(g):
        _accumulate(x, g * s * (1.0 - s))

    out._backward = backward
    return out


def reduce_max(x, axis, keepdims=False):
    """Max over one axis. Ties route gradient to the lowest index (argmax)."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"reduce-max-over-axis: axis {axis} invalid for shape {x.data.shape}")
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out_data = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)
    out = Tensor(out_data, op="reduce-max", parents=(x,))
    out.argmax_indices = idx

    def backward(g):
        gi = np.zeros_like(x.data)
        ge = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gi, np.expand_dims(idx, axis), ge, axis=axis)
        _accumulate(x, gi)

    out._backward = backward
    return out


def reduce_sum(x, axis=None, keepdims=False):
    """Sum over one axis, or over everything when axis is None."""
    x = as_tensor(x)
    if axis is not None:
        if not -x.ndim <= axis < x.ndim:
            raise ShapeError(f"reduce-sum-over-axis: axis {axis} invalid for shape {x.data.shape}")
        axis = axis % x.ndim
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims), op="reduce-sum", parents=(x,))

    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.data.shape).copy() if keepdims else np.full_like(x.data, g))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(x, np.broadcast_to(ge, x.data.shape).copy())

    out._backward = backward
    return out


def gather_rows(x, indices):
    """Select rows of a 2-D tensor; output shape is indices.shape + (row width,).

    The same row may be gathered many times; backward scatter-adds.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"gather-rows: input must be 2-D, got shape {x.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    n = x.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather-rows: indices out of range for {n} rows")
    out = Tensor(x.data[idx], op="gather-rows", parents=(x,))
    width = x.data.shape[1]

    def backward(g):
        gi = np.zeros_like(x.data)
        np.add.at(gi, idx.reshape(-1), g.reshape(-1, width))
        _accumulate(x, gi)

    out._backward = backward
    return out


def scale(x, factor):
    x = as_tensor(x)
    factor = float(factor)
    out = Tensor(x.data * factor, op="scale", parents=(x,))

    def backward(g):
        _accumulate(x, g * factor)

    out._backward = backward
    return out


def sqrt(x):
    """Elementwise square root; the subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt: negative input")
    s = np.sqrt(x.data)
    out = Tensor(s, op="sqrt", parents=(x,))

    def backward(g):
        safe = np.where(s > 0, s, 1.0)
        _accumulate(x, np.where(s > 0, 0.5 * g / safe, 0.0))

    out._backward = backward
    return out


def absolute(x):
    """Elementwise |x|; the subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    out = Tensor(np.abs(x.data), op="abs", parents=(x,))

    def backward(g):
        _accumulate(x, g * np.sign(x.data))

    out._backward = backward
    return out


def reciprocal(x):
    x = as_tensor(x)
    r = 1.0 / x.data
    out = Tensor(r, op="reciprocal", parents=(x,))

    def backward(g):
        _accumulate(x, -g * r * r)

    out._backward = backward
    return out


_PRIMITIVES = {
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "add": lambda inputs, attrs: add(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "concat-last-axis": lambda inputs, attrs: concat(inputs),
    "leaky-relu": lambda inputs, attrs: leaky_relu(inputs[0], **attrs),
    "sigmoid": lambda inputs, attrs: sigmoid(inputs[0]),
    "reduce-max-over-axis": lambda inputs, attrs: reduce_max(inputs[0], **attrs),
    "reduce-sum-over-axis": lambda inputs, attrs: reduce_sum(inputs[0], **attrs),
    "gather-rows": lambda inputs, attrs: gather_rows(inputs[0], **attrs),
    "scale": lambda inputs, attrs: scale(inputs[0], **attrs),
    "sqrt": lambda inputs, attrs: sqrt(inputs[0]),
    "abs": lambda inputs, attrs: absolute(inputs[0]),
    "reciprocal": lambda inputs, attrs: reciprocal(inputs[0]),
}


def apply_primitive(kind, inputs, **attrs):
    """Apply a primitive by name. Unknown kinds raise UnsupportedPrimitiveError."""
    if kind not in _PRIMITIVES:
        raise UnsupportedPrimitiveError(f"unknown primitive kind {kind!r}")
    return _PRIMITIVES[kind](list(inputs), attrs)


def backward(loss):
    """Propagate d(loss)/d(node) through the graph rooted at `loss`.

    Returns a map {trainable leaf -> gradient array}. Gradients accumulate
    into `.grad` (leaves keep earlier contributions, so batches can sum).
    The graph is single-shot: a second backward on the same loss raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphError("backward: graph already consumed by a previous backward")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss._consumed = True
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return {node: node.grad for node in topo if node.requires_grad and node.is_leaf()}
