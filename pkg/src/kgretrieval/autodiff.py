"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and remembers the operation that produced it.
Calling ``backward()`` on a scalar result walks the graph in reverse
topological order and accumulates gradients into every reachable tensor
with ``requires_grad=True``. Broadcasting follows numpy rules only for a
leading batch dimension or trailing bias-style shapes; anything fancier
needs an explicit reshape.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NotScalar(ValueError):
    """backward() was called on a tensor with more than one element."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording (forward-only mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prior = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prior
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Sum a gradient down to `shape` after numpy broadcasting expanded it.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return mul(self, power(_wrap(other), -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
    return out


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(out.grad, b.shape))

    out = _node(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward():
        if a.requires_grad:
            a._accum(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(out.grad * a.data, b.shape))

    out = _node(out_data, (a, b), backward)
    return out


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    if isinstance(exponent, Tensor):
        raise TypeError("power() supports constant exponents only")
    p = float(exponent)
    out_data = a.data ** p

    def backward():
        if a.requires_grad:
            a._accum(out.grad * p * a.data ** (p - 1.0))

    out = _node(out_data, (a,), backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul needs operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward():
        if a.requires_grad:
            ga = np.matmul(out.grad, b.data.swapaxes(-1, -2))
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), out.grad)
            b._accum(_unbroadcast(gb, b.shape))

    out = _node(out_data, (a, b), backward)
    return out


# -- shape manipulation ------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def backward():
        if a.requires_grad:
            a._accum(out.grad.reshape(a.shape))

    out = _node(out_data, (a,), backward)
    return out


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward():
        if a.requires_grad:
            a._accum(np.transpose(out.grad, inverse))

    out = _node(out_data, (a,), backward)
    return out


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def backward():
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(offset, offset + size)
                p._accum(out.grad[tuple(sl)])
            offset += size

    out = _node(out_data, parts, backward)
    return out


def getitem(a, idx) -> Tensor:
    a = _wrap(a)
    out_data = a.data[idx]

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a._accum(g)

    out = _node(np.array(out_data, copy=True), (a,), backward)
    return out


def index_select(a, indices, axis: int = 0) -> Tensor:
    """Gather rows along `axis` by integer index; duplicates allowed."""
    a = _wrap(a)
    indices = np.asarray(indices, dtype=np.intp)
    out_data = np.take(a.data, indices, axis=axis)

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            sl[axis] = indices
            np.add.at(g, tuple(sl), out.grad)
            a._accum(g)

    out = _node(out_data, (a,), backward)
    return out


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape).copy())

    out = _node(out_data, (a,), backward)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- pointwise nonlinearities --------------------------------------------------


def log(a) -> Tensor:
    a = _wrap(a)
    out_data = np.log(a.data)

    def backward():
        if a.requires_grad:
            a._accum(out.grad / a.data)

    out = _node(out_data, (a,), backward)
    return out


def exp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            a._accum(out.grad * out_data)

    out = _node(out_data, (a,), backward)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward():
        if a.requires_grad:
            a._accum(out.grad * out_data * (1.0 - out_data))

    out = _node(out_data, (a,), backward)
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            a._accum(out.grad * (1.0 - out_data * out_data))

    out = _node(out_data, (a,), backward)
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    # tanh form: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
    a = _wrap(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward():
        if a.requires_grad:
            sech2 = 1.0 - t * t
            d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            a._accum(out.grad * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

    out = _node(out_data, (a,), backward)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    # Gradient passes only strictly inside the interval.
    a = _wrap(a)
    out_data = np.clip(a.data, lo, hi)

    def backward():
        if a.requires_grad:
            mask = (a.data > lo) & (a.data < hi)
            a._accum(out.grad * mask)

    out = _node(out_data, (a,), backward)
    return out


# -- fused neural primitives ---------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward():
        if a.requires_grad:
            g = out.grad
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accum(out_data * (g - dot))

    out = _node(out_data, (a,), backward)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    if x.shape[-1] < 1:
        raise ShapeMismatch("layer_norm needs a non-empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = gain.data * xhat + bias.data

    def backward():
        g = out.grad
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accum(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            x._accum((gy - m1 - xhat * m2) * inv_std)

    out = _node(out_data, (x, gain, bias), backward)
    return out


def embedding(table, ids) -> Tensor:
    """Look up rows of `table` by integer id array."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.intp)
    out_data = table.data[ids]

    def backward():
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.shape[-1]))
            table._accum(g)

    out = _node(out_data, (table,), backward)
    return out


def l2_normalize(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, 1e-30)
    out_data = a.data / norm

    def backward():
        if a.requires_grad:
            g = out.grad
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accum((g - out_data * dot) / norm)

    out = _node(out_data, (a,), backward)
    return out


def cosine_similarity(a, b, axis: int = -1) -> Tensor:
    """Cosine similarity along `axis`, composed from normalize + dot."""
    return tsum(mul(l2_normalize(a, axis), l2_normalize(b, axis)), axis=axis)
