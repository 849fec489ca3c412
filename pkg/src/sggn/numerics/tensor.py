"""Dense tensors with a dynamically recorded reverse-mode tape.

Every backward rule is itself written in terms of ``Tensor`` operations, so a
gradient computed with ``create_graph=True`` can be differentiated again.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import ContractError, NumericError

_state = threading.local()


def is_recording() -> bool:
    return getattr(_state, "record", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = is_recording()
    _state.record = False
    try:
        yield
    finally:
        _state.record = prev


@contextlib.contextmanager
def enable_grad():
    prev = is_recording()
    _state.record = True
    try:
        yield
    finally:
        _state.record = prev


class Tensor:
    """An immutable n-d array node on the tape.

    ``parents`` and ``backward`` are only populated when the tensor was
    produced by a recorded operation on at least one tensor requiring grad.
    """

    __slots__ = ("data", "parents", "backward", "op", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, _fresh=False):
        arr = np.asarray(data, dtype=np.float64) if _fresh else np.array(data, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        self.data = arr
        self.parents = ()
        self.backward = None
        self.op = "leaf"
        self.requires_grad = bool(requires_grad)

    # -- basic protocol ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"tensor of shape {self.shape} is not a scalar")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def detach(self):
        return Tensor(self.data)

    # -- operator sugar ---------------------------------------------------
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

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

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data, _fresh=True)
    out.op = op
    if is_recording() and any(p.requires_grad for p in parents):
        out.parents = parents
        out.backward = backward
        out.requires_grad = True
    return out


def unbroadcast(g: Tensor, shape) -> Tensor:
    """Sum ``g`` down to ``shape`` by reversing numpy broadcasting."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, tuple(range(extra)), False)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = sum_(g, axes, True)
    return g if g.shape == shape else reshape(g, shape)


# -- elementwise binary -----------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(neg(g), b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g / b
        return unbroadcast(ga, a.shape), unbroadcast(neg(ga * a / b), b.shape)

    return _make(a.data / b.data, (a, b), back, "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    if p == 1.0:
        return a
    return _make(a.data ** p, (a,), lambda g: (g * (p * power(a, p - 1.0)),), "power")


# -- elementwise unary ------------------------------------------------------
def exp(a):
    a = as_tensor(a)
    out = None

    def back(g):
        return (g * out,)

    out = _make(np.exp(a.data), (a,), back, "exp")
    return out


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a,), "log")


def sqrt(a):
    a = as_tensor(a)
    out = None

    def back(g):
        return (g * 0.5 / out,)

    out = _make(np.sqrt(a.data), (a,), back, "sqrt")
    return out


def sin(a):
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * cos(a),), "sin")


def cos(a):
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (neg(g * sin(a)),), "cos")


def tanh(a):
    a = as_tensor(a)
    out = None

    def back(g):
        return (g * (1.0 - out * out),)

    out = _make(np.tanh(a.data), (a,), back, "tanh")
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = None

    def back(g):
        return (g * out * (1.0 - out),)

    out = _make(0.5 * (1.0 + np.tanh(0.5 * a.data)), (a,), back, "sigmoid")
    return out


def relu(a):
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def abs_(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def where(cond, a, b):
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is not differentiated."""
    a, b = as_tensor(a), as_tensor(b)
    c = np.asarray(cond, dtype=bool)
    cf = c.astype(np.float64)
    data = np.where(c, a.data, b.data)
    return _make(data, (a, b),
                 lambda g: (unbroadcast(g * cf, a.shape), unbroadcast(g * (1.0 - cf), b.shape)),
                 "where")


# -- linear algebra -----------------------------------------------------------
def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, tuple(axes))


def matmul(a, b):
    """Batched matrix product; both operands must be at least 2-d."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul operands must be at least 2-d")

    def back(g):
        return (unbroadcast(matmul(g, _swap_last(b)), a.shape),
                unbroadcast(matmul(_swap_last(a), g), b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), back, "matmul")


# -- reductions and shape ops ---------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def back(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, a.shape),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return sum_(a, axes, keepdims) * (1.0 / count)


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    return _make(np.broadcast_to(a.data, shape), (a,),
                 lambda g: (unbroadcast(g, a.shape),), "broadcast")


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def expand_dims(a, axis):
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.data, axis).shape)


def getitem(a, idx):
    a = as_tensor(a)
    shape = a.shape
    return _make(a.data[idx], (a,), lambda g: (scatter(g, idx, shape),), "getitem")


def scatter(g, idx, shape):
    """Adjoint of ``getitem``: place ``g`` into zeros of ``shape`` at ``idx``."""
    g = as_tensor(g)
    out = np.zeros(shape)
    np.add.at(out, idx, g.data)
    return _make(out, (g,), lambda h: (getitem(h, idx),), "scatter")


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(sl)))
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back,
                 "concatenate")


def stack(tensors, axis=0):
    tensors = [expand_dims(as_tensor(t), axis) for t in tensors]
    return concatenate(tensors, axis=axis)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = exp(x - shift)
    return e / sum_(e, axis, True)


def straight_through(a, value):
    """Forward ``value``; backward passes the adjoint to ``a`` unchanged."""
    a = as_tensor(a)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != a.shape:
        raise ContractError("straight-through value must match the tensor's shape")
    return _make(value.copy(), (a,), lambda g: (g,), "straight_through")


def dot(a, b):
    return sum_(mul(a, b))


# -- backward pass --------------------------------------------------------------
def _topo_order(root: Tensor):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(output: Tensor, inputs, grad_output=None, create_graph=False):
    """Reverse-mode sweep from ``output`` to each tensor in ``inputs``.

    Returns one gradient ``Tensor`` per input (zeros when unreachable).
    Raises ``NumericError`` naming the operation chain if a non-finite
    adjoint appears.
    """
    if grad_output is None:
        grad_output = Tensor(np.ones(output.shape))
    grads = {id(output): as_tensor(grad_output)}
    wanted = {id(t) for t in inputs}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(_topo_order(output)):
            g = grads.get(id(node))
            if g is None or node.backward is None:
                continue
            if id(node) not in wanted:
                del grads[id(node)]
            parent_grads = node.backward(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if not np.all(np.isfinite(pg.data)):
                    raise NumericError(
                        f"non-finite adjoint flowing from '{node.op}' into '{p.op}'",
                        trace=(output.op, node.op, p.op),
                    )
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return out
