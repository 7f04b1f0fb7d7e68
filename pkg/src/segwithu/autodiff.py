"""Minimal reverse-mode differentiation over numpy arrays.

Graphs are built eagerly during the forward pass and consumed by a single
call to :meth:`Tensor.backward`. Only tensors created with
``requires_grad=True`` (the learnable leaves) receive gradients; anything
derived purely from constants is a constant and records no parents.
"""

from __future__ import annotations

import functools
from itertools import chain

import numpy as np
from scipy.special import expit

from .field import NonFiniteError, check_finite


class GraphError(RuntimeError):
    """Raised on misuse of the differentiation graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")
    # make ndarray (op) Tensor dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every learnable leaf."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar, got shape {self.data.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; re-run the forward pass")
        self._consumed = True
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

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

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root):
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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x):
    """A learnable leaf."""
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def _make(data, parents, backward, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)),
                 "div")


def power(a, exponent):
    exponent = float(exponent)
    a = as_tensor(a)
    if exponent == 2.0:
        return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")
    return _make(a.data ** exponent, (a,),
                 lambda g: (exponent * a.data ** (exponent - 1.0) * g,), "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def log1p(a):
    a = as_tensor(a)
    return _make(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),), "log1p")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _make(out, (a,), backward, "sqrt")


def softplus(a):
    """log(1 + e^x), evaluated as logaddexp(0, x) so large |x| cannot overflow."""
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),), "softplus")


def clip_min(a, lo):
    a = as_tensor(a)
    keep = a.data >= lo
    return _make(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clip_min")


def smooth_l1(a, beta=1.0):
    a = as_tensor(a)
    ad = np.abs(a.data)
    quad = ad < beta
    out = np.where(quad, 0.5 * a.data ** 2 / beta, ad - 0.5 * beta)
    return _make(out, (a,), lambda g: (g * np.where(quad, a.data / beta, np.sign(a.data)),),
                 "smooth_l1")


def stop_gradient(a):
    return Tensor(as_tensor(a).data)


# reductions and shape ------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take(a, indices, axis):
    """Gather along one axis; repeated indices accumulate gradient."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None),) * axis + (indices,), g)
        return (out,)

    return _make(np.take(a.data, indices, axis=axis), (a,), backward, "take")


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def einsum(subscripts, *operands):
    """Differentiable einsum; each operand index must appear in the output or another operand."""
    operands = [as_tensor(t) for t in operands]
    inputs, output = subscripts.replace(" ", "").split("->")
    in_subs = inputs.split(",")
    out = np.einsum(subscripts, *[t.data for t in operands], optimize=True)

    def backward(g):
        grads = []
        for i, t in enumerate(operands):
            if not t.requires_grad:
                grads.append(None)
                continue
            others = [s for j, s in enumerate(in_subs) if j != i]
            expr = ",".join([output] + others) + "->" + in_subs[i]
            grads.append(np.einsum(expr, g, *[o.data for j, o in enumerate(operands) if j != i],
                                   optimize=True))
        return tuple(grads)

    return _make(out, tuple(operands), backward, "einsum")


def softmax(a, axis=1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
                 "softmax")


def log_softmax(a, axis=1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    return _make(out, (a,),
                 lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),), "log_softmax")


# numpy-facing wrapper --------------------------------------------------------

def field_op(fn):
    """Let a Tensor-valued function also serve plain ndarrays.

    If no argument is a Tensor the result comes back as ndarray(s). Results
    are checked for NaN/Inf either way.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        tensor_mode = any(_holds_tensor(a) for a in chain(args, kwargs.values()))
        out = fn(*args, **kwargs)
        return _finish(out, tensor_mode, fn.__name__)

    return wrapper


def _holds_tensor(x, depth=2):
    if isinstance(x, Tensor):
        return True
    if depth == 0:
        return False
    if isinstance(x, dict):
        x = x.values()
    elif not isinstance(x, (list, tuple)):
        return False
    return any(_holds_tensor(v, depth - 1) for v in x)


def _finish(out, tensor_mode, name):
    if isinstance(out, tuple):
        return tuple(_finish(o, tensor_mode, name) for o in out)
    if isinstance(out, Tensor):
        check_finite(out.data, name)
        return out if tensor_mode else out.data
    return out


__all__ = [
    "GraphError", "NonFiniteError", "Tensor", "as_tensor", "parameter", "add", "neg", "mul",
    "div", "power", "exp", "log", "log1p", "tanh", "sqrt", "softplus", "clip_min",
    "smooth_l1", "stop_gradient", "tsum", "mean", "reshape", "take", "concat", "einsum",
    "softmax", "log_softmax", "field_op",
]
