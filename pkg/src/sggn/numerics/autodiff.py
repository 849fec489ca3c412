"""Gradients, Jacobians, Hessians and Hessian-vector products."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError, SizeError
from .params import ParamVector
from .tensor import Tensor, backward, dot, enable_grad

DENSE_HESSIAN_LIMIT = 5000
FD_STEP = 1e-4


def _unwrap(point):
    if isinstance(point, ParamVector):
        return point.values, point
    return np.asarray(point, dtype=np.float64), None


def _wrap(values, like):
    return like.with_values(values) if like is not None else values


def _check_scalar(y: Tensor):
    if not isinstance(y, Tensor):
        raise ContractError("function must return a Tensor")
    if y.size != 1:
        raise ContractError(f"function output has shape {y.shape}; a scalar is required")
    if not np.isfinite(y.data).all():
        raise NumericError("function value is not finite", trace=(y.op,))


def grad_tensor(y: Tensor, x: Tensor, create_graph=True) -> Tensor:
    """Gradient of ``y.sum()`` with respect to ``x`` as a tape tensor."""
    return backward(y, [x], create_graph=create_graph)[0]


def value_and_grad(fn, point):
    x, like = _unwrap(point)
    with enable_grad():
        xt = Tensor(x, requires_grad=True)
        y = fn(xt)
        _check_scalar(y)
        g = backward(y, [xt])[0]
    return y.item(), _wrap(np.array(g.data), like)


def grad(fn, point):
    """Exact reverse-mode gradient of a scalar-valued tape function."""
    return value_and_grad(fn, point)[1]


def jacobian(fn, point):
    """Dense ``m x d`` Jacobian; one reverse sweep per output component."""
    x, _ = _unwrap(point)
    with enable_grad():
        xt = Tensor(x, requires_grad=True)
        y = fn(xt)
        if not np.isfinite(y.data).all():
            raise NumericError("function value is not finite", trace=(y.op,))
        m = y.size
        rows = np.zeros((m, x.size))
        seed = np.zeros(y.shape)
        flat = seed.reshape(-1)
        for i in range(m):
            flat[:] = 0.0
            flat[i] = 1.0
            rows[i] = backward(y, [xt], grad_output=Tensor(seed))[0].data.reshape(-1)
    return rows


def hessian(fn, point, step=FD_STEP):
    """Symmetrized Hessian from central differences of exact gradients.

    Column ``i`` uses the step ``step * (1 + |x_i|)``.
    """
    x, _ = _unwrap(point)
    d = x.size
    if d > DENSE_HESSIAN_LIMIT:
        raise SizeError(f"dense Hessian of dimension {d} exceeds {DENSE_HESSIAN_LIMIT}; use hvp")
    cols = np.zeros((d, d))
    for i in range(d):
        h = step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols[:, i] = (grad(fn, xp) - grad(fn, xm)) / (xp[i] - xm[i])
    return 0.5 * (cols + cols.T)


def hvp(fn, point, direction):
    """Hessian-vector product by differentiating ``<grad f, v>`` once more."""
    x, like = _unwrap(point)
    v, _ = _unwrap(direction)
    if v.shape != x.shape:
        raise ContractError("direction must match the point's shape")
    with enable_grad():
        xt = Tensor(x, requires_grad=True)
        y = fn(xt)
        _check_scalar(y)
        g = grad_tensor(y, xt, create_graph=True)
        s = dot(g, Tensor(v))
        if not s.requires_grad:
            return _wrap(np.zeros_like(x), like)
        hv = backward(s, [xt])[0]
    return _wrap(np.array(hv.data), like)


def jacobian_derivative(fn, point, step=FD_STEP):
    """Second derivatives of every output component: ``T[p, i, j] = d2 f_p / dx_i dx_j``.

    Central differences over exact Jacobians (so each ``T[p]`` equals the
    finite-difference Hessian of ``f_p``), symmetrized in ``(i, j)``.
    """
    x, _ = _unwrap(point)
    d = x.size
    if d > DENSE_HESSIAN_LIMIT:
        raise SizeError(f"dimension {d} exceeds {DENSE_HESSIAN_LIMIT}")
    m = None
    out = None
    for j in range(d):
        h = step * (1.0 + abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        dj = (jacobian(fn, xp) - jacobian(fn, xm)) / (xp[j] - xm[j])
        if out is None:
            m = dj.shape[0]
            out = np.zeros((m, d, d))
        out[:, :, j] = dj
    return 0.5 * (out + out.transpose(0, 2, 1))
