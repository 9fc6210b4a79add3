"""Tape-free reverse-mode automatic differentiation on numpy arrays.

Every differentiable op records its parents and a backward rule. Backward
rules are themselves written with :class:`Tensor` ops, so calling
:func:`grad` with ``create_graph=True`` yields gradients that can be
differentiated again (used by the discriminator gradient penalty). The fused
``mish`` and ``layer_norm`` ops call compiled kernels in their backward rule
and therefore support first-order gradients only.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .. import kernels

_GRAD_ENABLED = True


class DivergenceError(FloatingPointError):
    """A loss evaluated to a non-finite value."""


@contextlib.contextmanager
def set_grad_enabled(flag: bool):
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = flag
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def no_grad():
    return set_grad_enabled(False)


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float32)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        if k != 2:
            raise NotImplementedError("only squaring is supported")
        return square(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a1=-1, a2=-2):
        return swapaxes(self, a1, a2)

    @property
    def mT(self):
        return swapaxes(self, -1, -2)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    if like is not None and np.isscalar(x):
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _node(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and g.shape[i + lead] != 1
    )
    out = sum_(g, axes, keepdims=True) if axes else g
    return reshape(out, tuple(shape))


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = _pair(a, b)

    def backward(out, g):
        return (
            unbroadcast(g, a.shape) if a.requires_grad else None,
            unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)

    def backward(out, g):
        return (
            unbroadcast(g, a.shape) if a.requires_grad else None,
            unbroadcast(neg(g), b.shape) if b.requires_grad else None,
        )

    return _node(a.data - b.data, (a, b), backward)


def neg(a):
    def backward(out, g):
        return (neg(g),)

    return _node(-a.data, (a,), backward)


def mul(a, b):
    a, b = _pair(a, b)

    def backward(out, g):
        return (
            unbroadcast(mul(g, b), a.shape) if a.requires_grad else None,
            unbroadcast(mul(g, a), b.shape) if b.requires_grad else None,
        )

    return _node(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _pair(a, b)

    def backward(out, g):
        ga = unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = unbroadcast(neg(mul(g, div(out, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data / b.data, (a, b), backward)


def square(a):
    def backward(out, g):
        return (mul(g, mul(a, 2.0)),)

    return _node(np.square(a.data), (a,), backward)


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(out, g):
        ga = unbroadcast(matmul(g, swapaxes(b, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(matmul(swapaxes(a, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(np.matmul(a.data, b.data), (a, b), backward)


# ---------------------------------------------------------------- reductions / shape

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(out, g):
        return (broadcast_to(reshape(g, kept), a.shape),)

    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _node(np.asarray(data, dtype=a.dtype), (a,), backward)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(sum_(a, axes, keepdims), 1.0 / max(count, 1))


def broadcast_to(a, shape):
    shape = tuple(shape)
    if a.shape == shape:
        return a

    def backward(out, g):
        return (unbroadcast(g, a.shape),)

    return _node(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def reshape(a, shape):
    shape = tuple(shape)
    if a.shape == shape:
        return a

    def backward(out, g):
        return (reshape(g, a.shape),)

    return _node(a.data.reshape(shape), (a,), backward)


def swapaxes(a, a1=-1, a2=-2):
    def backward(out, g):
        return (swapaxes(g, a1, a2),)

    return _node(np.swapaxes(a.data, a1, a2), (a,), backward)


def getitem(a, idx):
    def backward(out, g):
        return (scatter(g, idx, a.shape),)

    return _node(a.data[idx], (a,), backward)


def scatter(g, idx, shape):
    """Zeros of ``shape`` with ``g`` added at ``idx`` (adjoint of getitem)."""
    data = np.zeros(shape, dtype=g.dtype)
    np.add.at(data, idx, g.data)

    def backward(out, gg):
        return (getitem(gg, idx),)

    return _node(data, (g,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(out, g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * nd
                sl[ax] = slice(int(lo), int(hi))
                grads.append(getitem(g, tuple(sl)))
            else:
                grads.append(None)
        return tuple(grads)

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


# ---------------------------------------------------------------- elementwise

def exp(a):
    def backward(out, g):
        return (mul(g, out),)

    return _node(np.exp(a.data), (a,), backward)


def log(a):
    def backward(out, g):
        return (div(g, a),)

    return _node(np.log(a.data), (a,), backward)


def tanh(a):
    def backward(out, g):
        return (mul(g, sub(1.0, square(out))),)

    return _node(np.tanh(a.data), (a,), backward)


def sigmoid(a):
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def backward(out, g):
        return (mul(g, mul(out, sub(1.0, out))),)

    return _node(data, (a,), backward)


def relu(a):
    mask = (a.data > 0).astype(a.dtype)

    def backward(out, g):
        return (mul(g, Tensor(mask)),)

    return _node(a.data * mask, (a,), backward)


def clip(a, lo, hi):
    mask = ((a.data >= lo) & (a.data <= hi)).astype(a.dtype)

    def backward(out, g):
        return (mul(g, Tensor(mask)),)

    return _node(np.clip(a.data, lo, hi), (a,), backward)


def minimum(a, b):
    """Elementwise minimum; ties route the gradient to ``a``."""
    a, b = _pair(a, b)
    pick_a = a.data <= b.data
    ma = pick_a.astype(a.dtype)

    def backward(out, g):
        return (
            unbroadcast(mul(g, Tensor(ma)), a.shape) if a.requires_grad else None,
            unbroadcast(mul(g, Tensor(1.0 - ma)), b.shape) if b.requires_grad else None,
        )

    return _node(np.where(pick_a, a.data, b.data), (a, b), backward)


def _first_order_only(*ts):
    if _GRAD_ENABLED and any(t.requires_grad for t in ts):
        raise NotImplementedError("double backward through a fused kernel is not supported")


def mish(a):
    def backward(out, g):
        _first_order_only(a, g)
        return (Tensor(kernels.mish_bwd(a.data, g.data)),)

    return _node(kernels.mish_fwd(a.data), (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis, then scale and shift.

    ``gamma``/``beta`` are ``(width,)``, or ``(members, width)`` for an
    ensemble, in which case ``x`` carries the member axis first.
    """
    if gamma.ndim == 1:
        y, xhat, rstd = kernels.layernorm_fwd(x.data, gamma.data, beta.data, eps)
    else:
        parts = [
            kernels.layernorm_fwd(x.data[e], gamma.data[e], beta.data[e], eps)
            for e in range(gamma.shape[0])
        ]
        y, xhat, rstd = (np.stack(p) for p in zip(*parts))

    def backward(out, g):
        _first_order_only(x, g)
        if gamma.ndim == 1:
            dx, dgamma, dbeta = kernels.layernorm_bwd(g.data, xhat, rstd, gamma.data)
        else:
            parts = [
                kernels.layernorm_bwd(g.data[e], xhat[e], rstd[e], gamma.data[e])
                for e in range(gamma.shape[0])
            ]
            dx, dgamma, dbeta = (np.stack(p) for p in zip(*parts))
        return (
            Tensor(dx) if x.requires_grad else None,
            Tensor(dgamma) if gamma.requires_grad else None,
            Tensor(dbeta) if beta.requires_grad else None,
        )

    return _node(y, (x, gamma, beta), backward)


# ---------------------------------------------------------------- differentiation

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def grad(output, inputs, create_graph=False, grad_output=None):
    """Gradients of ``output`` with respect to each tensor in ``inputs``.

    ``output`` must be a scalar unless ``grad_output`` is given. Inputs that
    do not influence the output get zero gradients.
    """
    if grad_output is None:
        if output.data.size != 1:
            raise ValueError("grad of a non-scalar output needs grad_output")
        grad_output = Tensor(np.ones_like(output.data))
    wanted = {id(t): i for i, t in enumerate(inputs)}
    results = [None] * len(inputs)
    if not output.requires_grad:
        return [Tensor(np.zeros_like(t.data)) for t in inputs]

    grads = {id(output): grad_output}
    with set_grad_enabled(create_graph):
        for node in reversed(_toposort(output)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                results[wanted[id(node)]] = g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(node, g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    return [
        r if r is not None else Tensor(np.zeros_like(t.data))
        for r, t in zip(results, inputs)
    ]


def value_and_grad(loss_fn, params):
    """Evaluate ``loss_fn(tensors)`` and its gradient for a dict of arrays.

    Returns ``(loss_value, {name: gradient array})``. Raises
    :class:`DivergenceError` if the loss is not finite.
    """
    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = loss_fn(tensors)
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    names = list(tensors)
    gs = grad(loss, [tensors[k] for k in names])
    return value, {k: g.data for k, g in zip(names, gs)}
