"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and records, on creation by an op, the closure
needed to push gradients back to its parents (an explicit tape).  The op set
is deliberately small: what the conv/BN/LSTM layer stack and the two losses
need, plus enough elementwise algebra to write tests against.  Fused layer
ops (conv, batch norm, LSTM) live in layers.py and plug in through
make_node().

All values are float64.  Every op output is checked for NaN/Inf and raises
NumericError on violation; disable via set_finite_checks(False) if an op is
expected to be probed with non-finite values.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import NumericError, ShapeError

_grad_enabled = True
_finite_checks = True


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = enabled


def grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable tape construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if _finite_checks and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """An ndarray with an optional gradient and a backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate .grad on every requires_grad tensor reachable from this scalar.

        The traversed subgraph is freed afterwards; a second backward on the
        same graph raises.
        """
        if self.data.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._done:
            raise RuntimeError("second backward without re-running forward")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.asarray(1.0)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._done = True
            # free the tape so intermediate buffers can be collected
            if node._parents:
                node._parents = ()
                node._backward = None
                if not node.requires_grad:
                    node.grad = None

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    """Create an op-output tensor; `backward(grad)` pushes to the parents.

    When the tape is disabled or no parent needs gradients, the node is a
    plain constant.
    """
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
        out.requires_grad = False
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- primitive ops ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return make_node(data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return make_node(data, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return make_node(data, (a, b), backward, "matmul")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    data = np.where(mask, x.data, 0.0)

    def backward(g):
        x._accumulate(g * mask)

    return make_node(data, (x,), backward, "relu")


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - data * data))

    return make_node(data, (x,), backward, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accumulate(g * data * (1.0 - data))

    return make_node(data, (x,), backward, "sigmoid")


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.asarray(x.data.sum())

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape).astype(np.float64))

    return make_node(data, (x,), backward, "sum")


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return make_node(data, (x,), backward, "reshape")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return make_node(data, tuple(tensors), backward, "concat")


def flip_time(x: Tensor) -> Tensor:
    """Reverse axis 1 (the time axis of a (batch, time, chan) tensor)."""
    x = _as_tensor(x)
    data = x.data[:, ::-1]

    def backward(g):
        x._accumulate(g[:, ::-1])

    return make_node(np.ascontiguousarray(data), (x,), backward, "flip_time")


# -- losses ----------------------------------------------------------------


def _loss_prep(a: Tensor, b: Tensor, mask) -> tuple[Tensor, Tensor, np.ndarray | None]:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"loss shape mismatch: {a.shape} vs {b.shape}")
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        m = np.broadcast_to(m.reshape(m.shape + (1,) * (a.ndim - m.ndim)), a.shape)
    return a, b, m


def mse(a, b, mask=None) -> Tensor:
    """Sum of squared differences; optional 0/1 mask excludes entries."""
    a, b, m = _loss_prep(a, b, mask)
    diff = a.data - b.data
    if m is not None:
        diff = diff * m
    data = np.asarray((diff * diff).sum())

    def backward(g):
        d = (2.0 * float(g)) * diff
        a._accumulate(d)
        b._accumulate(-d)

    return make_node(data, (a, b), backward, "mse")


def l1(a, b, mask=None) -> Tensor:
    """Sum of absolute differences; optional 0/1 mask excludes entries."""
    a, b, m = _loss_prep(a, b, mask)
    diff = a.data - b.data
    if m is not None:
        diff = diff * m
    data = np.asarray(np.abs(diff).sum())

    def backward(g):
        d = float(g) * np.sign(diff)
        if m is not None:
            d = d * m
        a._accumulate(d)
        b._accumulate(-d)

    return make_node(data, (a, b), backward, "l1")
