"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on tracked tensors records its parents and a backward
closure; ``Tensor.backward`` replays the trace in reverse topological
order and accumulates gradients into ``.grad``. All values are 64-bit
reals in row-major order.
"""

from __future__ import annotations

import numpy as np


class TraceError(RuntimeError):
    """backward() was called on a tensor with no recorded computation trace."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A forward pass produced NaN or Inf values."""


def check_finite(name: str, values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{name}: non-finite values in forward pass")


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting introduced or expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array, optionally carrying a gradient buffer and a trace."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @classmethod
    def _node(cls, data, parents, backward) -> "Tensor":
        """Internal: build a traced tensor from an op with a backward closure.

        ``backward`` receives the upstream gradient and must accumulate into
        the parents via ``_accum``. The node is tracked iff any parent is.
        """
        out = cls(data)
        tracked = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
        if tracked:
            out.requires_grad = True
            out._parents = tracked
            out._backward = backward
        return out

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, upstream=None) -> None:
        """Accumulate gradients of ``self`` into every tracked ancestor."""
        if not self.requires_grad or not self._parents:
            raise TraceError("tensor has no recorded computation trace")
        if upstream is None:
            upstream = np.ones_like(self.data)
        else:
            upstream = _as_array(upstream)
            if upstream.shape != self.data.shape:
                raise ShapeError(
                    f"upstream gradient shape {upstream.shape} does not match "
                    f"output shape {self.data.shape}"
                )
        _accum(self, upstream)
        for node in _toposort(self):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _toposort(root: Tensor) -> list:
    """Children-before-parents order over the tracked subgraph (iterative)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    order.reverse()
    return order


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise ops -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor._node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._node(out_data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward(g):
        if a.requires_grad:
            _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return Tensor._node(out_data, (a,), backward)


def tanh(a) -> Tensor:
    a = _lift(a)
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - y * y))

    return Tensor._node(y, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _lift(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            _accum(a, g * y * (1.0 - y))

    return Tensor._node(y, (a,), backward)


def relu(a) -> Tensor:
    a = _lift(a)
    y = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * (a.data > 0.0))

    return Tensor._node(y, (a,), backward)


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (1-D operands are promoted)."""
    a, b = _lift(a), _lift(b)
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    a2 = a.data if a.ndim == 2 else a.data[None, :]
    b2 = b.data if b.ndim == 2 else b.data[:, None]
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: inner dims differ ({a.shape} @ {b.shape})")
    out2 = a2 @ b2
    out_data = out2
    if a.ndim == 1:
        out_data = out_data[0]
    if b.ndim == 1:
        out_data = out_data[..., 0]

    def backward(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        if a.requires_grad:
            ga = g2 @ b2.T
            _accum(a, ga[0] if a.ndim == 1 else ga)
        if b.requires_grad:
            gb = a2.T @ g2
            _accum(b, gb[:, 0] if b.ndim == 1 else gb)

    return Tensor._node(out_data, (a, b), backward)


# -- shape ops -------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return Tensor._node(out_data, (a,), backward)


def take(a, key) -> Tensor:
    """Basic indexing/slicing with scatter-add backward."""
    a = _lift(a)
    out_data = a.data[key]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[key] = g
            _accum(a, buf)

    return Tensor._node(out_data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return Tensor._node(out_data, tuple(tensors), backward)


def flip_time(a) -> Tensor:
    """Reverse along axis 0 (sequence reversal)."""
    a = _lift(a)
    out_data = a.data[::-1].copy()

    def backward(g):
        if a.requires_grad:
            _accum(a, g[::-1])

    return Tensor._node(out_data, (a,), backward)


# -- reductions ------------------------------------------------------------

def reduce_sum(a, axis=None) -> Tensor:
    a = _lift(a)
    out_data = a.data.sum(axis=axis)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                _accum(a, np.full_like(a.data, g))
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return Tensor._node(out_data, (a,), backward)


def reduce_mean(a, axis=None) -> Tensor:
    a = _lift(a)
    out_data = a.data.mean(axis=axis)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if a.requires_grad:
            if axis is None:
                _accum(a, np.full_like(a.data, g / count))
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis) / count, a.data.shape).copy())

    return Tensor._node(out_data, (a,), backward)
