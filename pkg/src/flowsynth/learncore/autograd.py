"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Only the operations the agent needs are provided. Each op records its
parents and a closure that maps the output gradient to parent gradients.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy import special

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def _unary(x, value, deriv) -> Tensor:
    x = _t(x)
    return _make(value, (x,), lambda g: (g * deriv,))


def tanh(x) -> Tensor:
    x = _t(x)
    y = np.tanh(x.data)
    return _unary(x, y, 1.0 - y * y)


def exp(x) -> Tensor:
    x = _t(x)
    y = np.exp(x.data)
    return _unary(x, y, y)


def log(x) -> Tensor:
    x = _t(x)
    return _unary(x, np.log(x.data), 1.0 / x.data)


def softplus(x) -> Tensor:
    x = _t(x)
    return _unary(x, np.logaddexp(0.0, x.data), special.expit(x.data))


def square(x) -> Tensor:
    x = _t(x)
    return _unary(x, x.data * x.data, 2.0 * x.data)


def gammaln(x) -> Tensor:
    x = _t(x)
    return _unary(x, special.gammaln(x.data), special.digamma(x.data))


def digamma(x) -> Tensor:
    x = _t(x)
    return _unary(x, special.digamma(x.data), special.polygamma(1, x.data))


def clip(x, lo: float, hi: float) -> Tensor:
    x = _t(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _unary(x, np.clip(x.data, lo, hi), inside.astype(np.float64))


def minimum(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    take_a = a.data <= b.data
    return _make(np.minimum(a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)))


# --------------------------------------------------------------------------
# reductions and structure


def sum_all(x) -> Tensor:
    x = _t(x)
    return _make(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x) -> Tensor:
    x = _t(x)
    n = x.data.size
    return _make(np.mean(x.data), (x,), lambda g: (np.full(x.shape, g / n),))


def sum_rows(x) -> Tensor:
    """Sum over the last axis of a 2-d tensor."""
    x = _t(x)
    return _make(x.data.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], x.shape[1], axis=1),))


def column(x, j: int) -> Tensor:
    x = _t(x)

    def back(g):
        out = np.zeros_like(x.data)
        out[:, j] = g
        return (out,)

    return _make(x.data[:, j].copy(), (x,), back)


def concat(xs, axis: int = 1) -> Tensor:
    xs = [_t(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def take_rows(x, idx) -> Tensor:
    x = _t(x)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), back)


def segment_sum(x, seg, n_seg: int) -> Tensor:
    """Sum rows of ``x`` into ``n_seg`` buckets given by integer ids ``seg``."""
    x = _t(x)
    seg = np.asarray(seg, dtype=np.int64)
    out = np.zeros((n_seg,) + x.shape[1:])
    np.add.at(out, seg, x.data)
    return _make(out, (x,), lambda g: (g[seg],))


def segment_mean(x, seg, n_seg: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.bincount(seg, minlength=n_seg).astype(np.float64)
    inv = 1.0 / np.maximum(counts, 1.0)
    return mul(segment_sum(x, seg, n_seg), inv[:, None] if _t(x).data.ndim == 2 else inv)


# --------------------------------------------------------------------------
# log-softmax variants

NEG_INF = -1e30


def masked_log_softmax(logits, mask) -> Tensor:
    """Row-wise log-softmax over entries where ``mask`` is true; masked entries get ~-inf."""
    z = _t(logits)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("every row needs at least one legal entry")
    zm = np.where(mask, z.data, NEG_INF)
    zmax = zm.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(zm - zmax), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    p = e / s
    out = np.where(mask, zm - zmax - np.log(s), NEG_INF)

    def back(g):
        g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (z,), back)


def segment_log_softmax(logits, seg, n_seg: int) -> Tensor:
    """Log-softmax of a flat vector within each segment."""
    z = _t(logits)
    seg = np.asarray(seg, dtype=np.int64)
    zmax = np.full(n_seg, -np.inf)
    np.maximum.at(zmax, seg, z.data)
    e = np.exp(z.data - zmax[seg])
    s = np.zeros(n_seg)
    np.add.at(s, seg, e)
    out = z.data - zmax[seg] - np.log(s[seg])
    p = np.exp(out)

    def back(g):
        gs = np.zeros(n_seg)
        np.add.at(gs, seg, g)
        return (g - p * gs[seg],)

    return _make(out, (z,), back)
