"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and records the operations applied to it;
calling backward() on a scalar loss walks the recorded graph once and
accumulates gradients into the participating Parameters. The op set is
deliberately small: affine pieces (matmul, add, mul, ...), ELU, tanh,
exp, log, square, clip, elementwise min, reductions, slicing, and
concatenation. Gaussian log-densities and KL terms are composed from
these primitives so their gradients are exact by construction.

Dtype follows the inputs: parameters are float32 in production, and the
finite-difference tests rebuild the same graphs in float64.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GraphConsumed(RuntimeError):
    """backward() was called twice on the same recorded graph."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_consumed")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), bwd=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._bwd = bwd
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph walk --

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeMismatch("backward requires a scalar loss")
        if self._consumed:
            raise GraphConsumed("backward already ran on this graph")

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

        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            node._consumed = True
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._bwd is None:
                continue
            for parent, pg in zip(node._parents, node._bwd(g)):
                if pg is None:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        other = _wrap(other)
        return mul(self, reciprocal(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        data = self.data[key]

        def bwd(g):
            out = np.zeros_like(self.data)
            out[key] = g
            return (out,)

        return Tensor(data, parents=(self,), bwd=bwd)


class Parameter(Tensor):
    """Leaf tensor updated by the optimizer; float32 row-major by default."""

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.ascontiguousarray(data, dtype=dtype),
                         requires_grad=True)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    # python scalars become float32 so they never promote a float32 graph;
    # float64 shadow graphs keep their dtype through numpy promotion
    if isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float32))
    return Tensor(np.asarray(x))


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data
    return Tensor(data, parents=(a, b), bwd=lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data
    return Tensor(data, parents=(a, b), bwd=lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def reciprocal(a) -> Tensor:
    a = _wrap(a)
    data = 1.0 / a.data
    return Tensor(data, parents=(a,), bwd=lambda g: (-g * data * data,))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(
            f"matmul {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    return Tensor(data, parents=(a, b), bwd=lambda g: (
        g @ b.data.T, a.data.T @ g))


def affine(x, w, b) -> Tensor:
    """x @ w + b with the bias broadcast over rows."""
    return add(matmul(x, w), b)


def elu(x) -> Tensor:
    x = _wrap(x)
    neg = np.expm1(np.minimum(x.data, 0.0))
    data = np.where(x.data > 0.0, x.data, neg)
    return Tensor(data, parents=(x,), bwd=lambda g: (
        g * np.where(x.data > 0.0, 1.0, neg + 1.0),))


def tanh(x) -> Tensor:
    x = _wrap(x)
    data = np.tanh(x.data)
    return Tensor(data, parents=(x,), bwd=lambda g: (g * (1.0 - data * data),))


def exp(x) -> Tensor:
    x = _wrap(x)
    data = np.exp(x.data)
    return Tensor(data, parents=(x,), bwd=lambda g: (g * data,))


def log(x) -> Tensor:
    x = _wrap(x)
    return Tensor(np.log(x.data), parents=(x,), bwd=lambda g: (g / x.data,))


def square(x) -> Tensor:
    x = _wrap(x)
    return Tensor(x.data * x.data, parents=(x,),
                  bwd=lambda g: (g * 2.0 * x.data,))


def clip(x, lo: float, hi: float) -> Tensor:
    x = _wrap(x)
    data = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)
    return Tensor(data, parents=(x,), bwd=lambda g: (g * inside,))


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)
    return Tensor(data, parents=(a, b), bwd=lambda g: (
        _unbroadcast(g * take_a, a.data.shape),
        _unbroadcast(g * ~take_a, b.data.shape)))


def tsum(x, axis=None) -> Tensor:
    x = _wrap(x)
    data = x.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return Tensor(data, parents=(x,), bwd=bwd)


def tmean(x, axis=None) -> Tensor:
    x = _wrap(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis), 1.0 / count)


def concat(tensors: list, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(data, parents=tuple(tensors), bwd=bwd)


# -- composed densities ------------------------------------------------------

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_logp(a, mean, log_std) -> Tensor:
    """Diagonal-Gaussian log-density per row: (N, k) inputs -> (N,).

    log_std may be a (k,) parameter broadcast over rows.
    """
    z = mul(a - mean, exp(-log_std))
    k = _wrap(a).data.shape[-1]
    return (tsum(square(z), axis=-1) * -0.5) - tsum(
        _broadcast_rows(log_std, _wrap(a).data.shape), axis=-1) - 0.5 * k * LOG_2PI


def _broadcast_rows(t, shape) -> Tensor:
    t = _wrap(t)
    if t.data.shape == shape:
        return t
    data = np.broadcast_to(t.data, shape)
    return Tensor(data, parents=(t,),
                  bwd=lambda g: (_unbroadcast(g, t.data.shape),))


def kl_standard_normal(mu, log_sigma) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) per row, summed over dims: (N, k) -> (N,)."""
    var = exp(mul(log_sigma, 2.0))
    inner = square(mu) + var - mul(log_sigma, 2.0) - 1.0
    return tsum(inner, axis=-1) * 0.5


def kl_diag_gaussians(mu_p, log_sigma_p, mu_q, log_sigma_q) -> Tensor:
    """KL(p || q) for diagonal Gaussians, per row summed over dims."""
    var_ratio = exp(mul(log_sigma_p - log_sigma_q, 2.0))
    scaled = mul(square(mu_p - mu_q), exp(mul(log_sigma_q, -2.0)))
    inner = var_ratio + scaled - 1.0 - mul(log_sigma_p - log_sigma_q, 2.0)
    return tsum(inner, axis=-1) * 0.5
