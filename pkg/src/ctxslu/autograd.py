"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The graph is define-by-run: every op appends its output node with a closure
that pushes the upstream gradient to its parents.  ``backward`` replays the
nodes in reverse topological order and accumulates gradients additively, so
a tensor feeding several consumers receives the sum of all contributions.
Gradients persist until ``zero_grad`` is called explicitly.

Everything is 64-bit; verification against finite differences is the point,
not speed.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """Operand values fall outside the op's domain (e.g. log of <= 0)."""


class Tensor:
    """Dense float64 array participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is np.ndarray and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


_grad_enabled = True


class no_grad:
    """Context manager disabling tape construction (forward values only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_binary_shapes(op: str, a: Tensor, b: Tensor):
    # Equal shapes, or one operand is a scalar (needed for attention scaling).
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    # Reduce a gradient back to a scalar operand's shape.
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


# -- elementwise ops --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes("add", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes("sub", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes("mul", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    """Multiply by a plain (non-differentiated) constant."""
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _node(a.data * c, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - y * y))

    return _node(y, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # overflow-free: sigmoid(x) = (tanh(x/2) + 1) / 2
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def backward(g):
        a._accumulate(g * y * (1.0 - y))

    return _node(y, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: operand must be strictly positive")

    def backward(g):
        a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), backward)


def reciprocal(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data == 0):
        raise DomainError("reciprocal: operand must be nonzero")
    y = 1.0 / a.data

    def backward(g):
        a._accumulate(-g * y * y)

    return _node(y, (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only where unclipped."""
    a = _as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)

    def backward(g):
        a._accumulate(g * mask)

    return _node(np.clip(a.data, lo, hi), (a,), backward)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; also covers matrix @ vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree {a.shape} @ {b.shape}")

    def backward(g):
        if b.data.ndim == 1:
            a._accumulate(np.outer(g, b.data))
            b._accumulate(a.data.T @ g)
        else:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def concat(tensors) -> Tensor:
    """Concatenate 1-D tensors (scalars are lifted to length 1)."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input")
    for t in tensors:
        if t.data.ndim > 1:
            raise ShapeError(f"concat: expected vectors, got shape {t.shape}")
    parts = [p if p.ndim == 1 else p.reshape(1)
             for p in (t.data for t in tensors)]

    def backward(g):
        lo = 0
        for t, p in zip(tensors, parts):
            hi = lo + p.size
            t._accumulate(g[lo:hi].reshape(t.shape))
            lo = hi

    return _node(np.concatenate(parts), tuple(tensors), backward)


def index(a, i: int) -> Tensor:
    """Select element i of a 1-D tensor as a scalar."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise ShapeError(f"index: expected vector, got shape {a.shape}")

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[i] = g
        a._accumulate(buf)

    return _node(a.data[i], (a,), backward)


def slice1d(a, lo: int, hi: int) -> Tensor:
    """Contiguous slice [lo:hi] of a 1-D tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise ShapeError(f"slice1d: expected vector, got shape {a.shape}")

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[lo:hi] = g
        a._accumulate(buf)

    return _node(a.data[lo:hi], (a,), backward)


def sum_reduce(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(np.full_like(a.data, g))

    return _node(np.sum(a.data), (a,), backward)


def softmax(scores) -> Tensor:
    """Softmax over a 1-D tensor, max-subtracted for stability."""
    scores = _as_tensor(scores)
    if scores.data.ndim != 1 or scores.size == 0:
        raise ShapeError(f"softmax: expected nonempty vector, got shape {scores.shape}")
    if not np.all(np.isfinite(scores.data)):
        raise DomainError("softmax: scores must be finite")
    e = np.exp(scores.data - np.max(scores.data))
    y = e / np.sum(e)

    def backward(g):
        # J^T g = y * (g - <g, y>)
        scores._accumulate(y * (g - np.dot(g, y)))

    return _node(y, (scores,), backward)


def zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n))


# -- reverse pass -----------------------------------------------------------

def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into t.grad for every reachable tensor."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
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
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(params) -> None:
    """Reset gradients on an iterable or dict of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()
