"""Dense float64 tensors with a reverse-mode gradient tape.

Each thread owns one :class:`GradientTape`. Operations whose inputs require
gradients append a node to the active tape; :func:`backward` walks the tape
in reverse recording order, which is a valid reverse topological order
because a node can only reference nodes recorded before it.
"""
import threading
from contextlib import contextmanager

import numpy as np

from ..errors import ContractError, ShapeError


class _Node:
    __slots__ = ("parents", "backward", "grad", "generation", "index")

    def __init__(self, parents, backward, generation, index):
        self.parents = parents
        self.backward = backward
        self.grad = None
        self.generation = generation
        self.index = index


class GradientTape:
    """Append-only record of differentiable operations for one context."""

    def __init__(self):
        self.nodes = []
        self.generation = 0
        self.enabled = True

    def record(self, parents, backward):
        node = _Node(parents, backward, self.generation, len(self.nodes))
        self.nodes.append(node)
        return node

    def reset(self):
        self.nodes = []
        self.generation += 1

    def __len__(self):
        return len(self.nodes)

    def owns(self, node):
        return (node is not None and node.generation == self.generation
                and node.index < len(self.nodes) and self.nodes[node.index] is node)

    def backward(self, loss, retain=False):
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ContractError("backward() needs a scalar loss tensor")
        if not self.owns(loss._node):
            raise ContractError("loss is not recorded on the active tape")
        loss._node.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes[:loss._node.index + 1]):
            g = node.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                pnode = parent._node
                if pnode is None:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                elif pnode.grad is None:
                    pnode.grad = pg
                else:
                    pnode.grad = pnode.grad + pg
            node.grad = None
        if not retain:
            self.reset()


_state = threading.local()


def get_tape():
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = GradientTape()
    return tape


@contextmanager
def no_grad():
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def backward(loss, retain=False):
    """Accumulate d(loss)/d(leaf) into every trainable leaf's ``grad``."""
    get_tape().backward(loss, retain=retain)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._node = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _result(data, parents, backward):
    out = Tensor._wrap(data)
    tape = get_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = tape.record(parents, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- binary ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * ad, b.shape) if b.requires_grad else None))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, b.shape) if b.requires_grad else None
        return ga, gb
    return _result(out, (a, b), bw)


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    pick_a = a.data >= b.data
    return _result(np.where(pick_a, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                              _unbroadcast(np.where(pick_a, 0.0, g), b.shape)))


def where(cond, a, b):
    """Select ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return _result(np.where(cond, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                              _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# -- unary ----------------------------------------------------------------

def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x):
    x = as_tensor(x)
    s = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def clip01(x):
    # subgradient 1 on the closed interval so saturated-at-0 values can move
    x = as_tensor(x)
    inside = (x.data >= 0.0) & (x.data <= 1.0)
    return _result(np.clip(x.data, 0.0, 1.0), (x,), lambda g: (np.where(inside, g, 0.0),))


def tabs(x):
    x = as_tensor(x)
    s = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * s,))


def square(x):
    x = as_tensor(x)
    d = x.data
    return _result(d * d, (x,), lambda g: (2.0 * g * d,))


def reciprocal(x):
    x = as_tensor(x)
    r = 1.0 / x.data
    return _result(r, (x,), lambda g: (-g * r * r,))


def elu(x):
    x = as_tensor(x)
    pos = x.data > 0
    e = np.exp(np.minimum(x.data, 0.0))
    return _result(np.where(pos, x.data, e - 1.0), (x,), lambda g: (np.where(pos, g, g * e),))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "clip01": clip01, "abs": tabs,
          "square": square, "reciprocal": reciprocal, "elu": elu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "max": maximum}


def elementwise(op_kind, a, b=None):
    if op_kind in _UNARY:
        if b is not None:
            raise ContractError(f"{op_kind} takes one operand")
        return _UNARY[op_kind](a)
    if op_kind in _BINARY:
        if b is None:
            raise ContractError(f"{op_kind} takes two operands")
        return _BINARY[op_kind](a, b)
    raise ContractError(f"unknown elementwise op {op_kind!r}")


# -- reductions and shape -------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)
    return _result(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axis, keepdims) * (1.0 / n)


def tmax(x, axis, keepdims=False):
    """Max along one axis; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    axis %= x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, g, axis=axis)
        return (gx,)
    return _result(out if keepdims else np.squeeze(out, axis), (x,), bw)


def reshape(x, shape):
    x = as_tensor(x)
    orig = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def getitem(x, idx):
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        gx[idx] = g
        return (gx,)
    return _result(np.ascontiguousarray(x.data[idx]), (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    axis %= len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"cannot concatenate {t.shape} with {ref} along axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(as_tensor, tensors)], axis)
