"""Reverse-mode automatic differentiation over dense numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. Calling
:func:`backward` on a scalar walks the recorded graph in reverse topological
order.
"""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    """Raised when backward is requested on something without a recorded graph."""


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (int, float)):
        # python scalars stay weakly typed so float32 graphs stay float32
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array value plus an optional gradient slot.

    ``requires_grad`` marks leaves whose gradient should be accumulated.
    Intermediate tensors require grad whenever any parent does.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _op: str = ""):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = None
        self._op = _op

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, grad={'yes' if self.requires_grad else 'no'})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data, name: str | None = None):
        super().__init__(np.asarray(data), requires_grad=True, name=name)


def _make(data, parents, op, backward):
    needs = any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(p for p in parents if isinstance(p, Tensor)), _op=op)
    if needs:
        out._backward = backward
    return out


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on."""
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor produced by a forward computation")
    if not loss.requires_grad:
        raise GraphError("backward called on a tensor with no recorded graph; run a forward pass first")
    if grad is None:
        if loss.data.size != 1:
            raise GraphError(f"implicit gradient only defined for scalars, got shape {loss.shape}")
        grad = np.ones_like(loss.data)

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            if node.grad is None:
                node.grad = np.array(g, dtype=node.data.dtype, copy=True)
            else:
                node.grad = node.grad + g
            continue
        for parent, pg in node._backward(g):
            if parent is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg), parent.shape)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise -------------------------------------------------------------

def _t(x):
    return x if isinstance(x, Tensor) else None


def add(a, b):
    ad, bd = _as_array(a), _as_array(b)
    return _make(ad + bd, (a, b), "add", lambda g: ((_t(a), g), (_t(b), g)))


def sub(a, b):
    ad, bd = _as_array(a), _as_array(b)
    return _make(ad - bd, (a, b), "sub", lambda g: ((_t(a), g), (_t(b), -g)))


def mul(a, b):
    ad, bd = _as_array(a), _as_array(b)
    return _make(ad * bd, (a, b), "mul", lambda g: ((_t(a), g * bd), (_t(b), g * ad)))


def div(a, b):
    ad, bd = _as_array(a), _as_array(b)
    out = ad / bd
    return _make(out, (a, b), "div", lambda g: ((_t(a), g / bd), (_t(b), -g * out / bd)))


def power(a, exponent: float):
    ad = _as_array(a)
    out = ad ** exponent
    return _make(out, (a,), "pow", lambda g: ((_t(a), g * exponent * ad ** (exponent - 1)),))


def exp(a):
    out = np.exp(_as_array(a))
    return _make(out, (a,), "exp", lambda g: ((_t(a), g * out),))


def log(a):
    ad = _as_array(a)
    return _make(np.log(ad), (a,), "log", lambda g: ((_t(a), g / ad),))


def sqrt(a):
    out = np.sqrt(_as_array(a))

    def bw(g):
        # derivative is unbounded at 0; treat it as 0 there (zero-norm rows)
        with np.errstate(divide="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1), 0)
        return ((_t(a), g * d),)

    return _make(out, (a,), "sqrt", bw)


def relu(a):
    ad = _as_array(a)
    mask = ad > 0
    return _make(ad * mask, (a,), "relu", lambda g: ((_t(a), g * mask),))


def maximum0(a):
    return relu(a)


# -- reductions / shape ------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    ad = _as_array(a)
    out = ad.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(ad.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((_t(a), np.broadcast_to(g, ad.shape)),)

    return _make(out, (a,), "sum", bw)


def mean(a, axis=None, keepdims=False):
    ad = _as_array(a)
    if axis is None:
        n = ad.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([ad.shape[i] for i in axes]))
    out = ad.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(ad.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((_t(a), np.broadcast_to(g, ad.shape) / n),)

    return _make(out, (a,), "mean", bw)


def reshape(a, shape):
    ad = _as_array(a)
    return _make(ad.reshape(shape), (a,), "reshape", lambda g: ((_t(a), g.reshape(ad.shape)),))


def transpose(a, axes=None):
    ad = _as_array(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(ad, axes), (a,), "transpose",
                 lambda g: ((_t(a), np.transpose(g, inv)),))


def getitem(a, idx):
    ad = _as_array(a)

    def bw(g):
        full = np.zeros_like(ad)
        np.add.at(full, idx, g)
        return ((_t(a), full),)

    return _make(ad[idx], (a,), "getitem", bw)


def concat(tensors, axis=0):
    arrays = [_as_array(t) for t in tensors]
    sizes = [x.shape[axis] for x in arrays]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        return tuple((_t(t), p) for t, p in zip(tensors, parts))

    return _make(np.concatenate(arrays, axis=axis), tuple(tensors), "concat", bw)


def matmul(a, b):
    ad, bd = _as_array(a), _as_array(b)

    def bw(g):
        return ((_t(a), g @ np.swapaxes(bd, -1, -2)), (_t(b), np.swapaxes(ad, -1, -2) @ g))

    return _make(ad @ bd, (a, b), "matmul", bw)


def logsumexp(a, axis=-1, keepdims=False):
    """Numerically stable log-sum-exp along ``axis``."""
    ad = _as_array(a)
    m = np.max(ad, axis=axis, keepdims=True)
    e = np.exp(ad - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    res = out if keepdims else np.squeeze(out, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return ((_t(a), g * soft),)

    return _make(res, (a,), "logsumexp", bw)


def l2_normalize(x, axis=-1, eps: float = 1e-12):
    """Scale ``x`` to unit L2 norm along ``axis``; ``eps`` guards zero rows."""
    norm = sqrt(tsum(x * x, axis=axis, keepdims=True))
    return x / (norm + eps)


def no_grad_copy(t: Tensor) -> Tensor:
    return Tensor(np.array(t.data, copy=True))
sum = tsum
