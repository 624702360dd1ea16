"""Minimal reverse-mode automatic differentiation over numpy arrays.

Heavy operators (convolutions, normalization) live in layers.py as
fused ops with hand-derived backward passes; this module provides the
Tensor graph plus the elementwise/reduction/linear-algebra primitives
the losses and the prototype generator are composed from.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._vjp = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # -- graph ---------------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Backpropagate from this tensor (default seed: ones)."""
        topo = []
        visited = set()
        stack = [(self, False)]
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

        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar needs an explicit gradient")
            self.grad = np.ones_like(self.data)
        else:
            self.grad = np.asarray(grad)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = np.asarray(g)
                if parent.grad is None:
                    parent.grad = g.copy() if g.base is not None or g is parent.data else g
                else:
                    parent.grad = parent.grad + g
            # release graph references as we go
            node._parents = ()
            node._vjp = None

    # -- operators -----------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; scalar constants adopt the tensor operand's dtype
    so float32 graphs are not silently promoted to float64."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.isscalar(b):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.isscalar(a):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def parameter(data, name: str | None = None, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)


def _node(data, parents, vjp) -> Tensor:
    """Create an op output; skips graph bookkeeping when grads are off."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to shape (the reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise binary ops --------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _pair(a, b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = _pair(a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = _pair(a, b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float):
    a = as_tensor(a)
    exponent = float(exponent)
    return _node(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1.0),),
    )


# -- elementwise unary ops ---------------------------------------------


def relu(a):
    a = as_tensor(a)
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _node(out_data, (a,), lambda g: (g * 0.5 / out_data,))


# -- reductions --------------------------------------------------------


def _restore_axes(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(ax % len(shape) for ax in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    return _node(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_restore_axes(g, a.shape, axis, keepdims),),
    )


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / out_data.size
    return _node(
        out_data,
        (a,),
        lambda g: (_restore_axes(g, a.shape, axis, keepdims) / count,),
    )


def tmax(a, axis, keepdims=False):
    """Max over one axis; gradient splits equally across tied maxima."""
    a = as_tensor(a)
    out_data = a.data.max(axis=axis, keepdims=True)
    mask = a.data == out_data
    counts = mask.sum(axis=axis, keepdims=True)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return ((mask / counts) * gk,)

    return _node(out_data if keepdims else out_data.squeeze(axis), (a,), vjp)


def logsumexp(a, axis, keepdims=False):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    z = np.exp(a.data - m)
    s = z.sum(axis=axis, keepdims=True)
    out_data = np.log(s) + m
    softmax = z / s

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (softmax * gk,)

    return _node(out_data if keepdims else out_data.squeeze(axis), (a,), vjp)


# -- shape ops ---------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _node(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (_unbroadcast(g, a.shape),),
    )


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def take(a, idx):
    """Integer/slice indexing with scatter-add backward."""
    a = as_tensor(a)
    idx_c = idx.copy() if isinstance(idx, np.ndarray) else idx

    def vjp(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx_c, g)
        return (gx,)

    return _node(a.data[idx_c], (a,), vjp)


# -- linear algebra ----------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), vjp)


# -- fused classification loss ----------------------------------------


def cross_entropy_mean(logits, labels):
    """Mean softmax cross-entropy of (B, K) logits against int labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.shape[0]
    m = logits.data.max(axis=1, keepdims=True)
    z = np.exp(logits.data - m)
    softmax = z / z.sum(axis=1, keepdims=True)
    log_probs = np.log(softmax[np.arange(n), labels])
    loss = -log_probs.mean()

    def vjp(g):
        grad = softmax.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return _node(loss, (logits,), vjp)
