"""A small reverse-mode autodiff over dense numpy arrays.

Every op that sees an input requiring gradients records a node on the
dynamic tape (the ``_parents``/``_backward`` pair). Under ``no_grad()`` no
node is recorded, which is how the momentum encoder runs.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np


class NoTapeError(RuntimeError):
    pass


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.tape_nodes = 0


_state = _State()


def tape_node_count() -> int:
    return _state.tape_nodes


def reset_tape_node_count():
    _state.tape_nodes = 0


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        _state.tape_nodes += 1
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = b
        return _make(a.data * s, (a,), lambda g: (g * s,))

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        # skip the product for an operand nobody needs (e.g. raw input batches)
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def concat(tensors, axis=1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def rowdot(a, b) -> Tensor:
    """Per-row inner product of two (N, D) tensors -> (N, 1)."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return g * b.data, g * a.data

    return _make(np.sum(a.data * b.data, axis=1, keepdims=True), (a, b), bw)


def weighted_sum(terms) -> Tensor:
    """sum(w * t) for (w, scalar tensor) pairs."""
    terms = [(w, as_tensor(t)) for w, t in terms]
    total = sum(w * t.data for w, t in terms)

    def bw(g):
        return tuple(w * g for w, _ in terms)

    return _make(np.asarray(total, dtype=terms[0][1].dtype), tuple(t for _, t in terms), bw)


def backward(loss: Tensor, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise NoTapeError("backward() called on a value with no recorded tape")
    if grad is None:
        if loss.data.size != 1:
            raise ValueError("loss_grad is required for non-scalar outputs")
        grad = np.ones_like(loss.data)
    grad = np.asarray(grad, dtype=loss.dtype)

    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
