"""Small-noise expansion of the loss gap between stochastic and deterministic rollouts.

For the Euler-Maruyama parameter system the expected terminal-loss gap
behaves as ``gap(eps) = (eps**2 / 2) * C + O(eps**4)`` for a coefficient
``C`` built from the Jacobian products ``Phi``, the diffusion, the loss
Hessian and the drift Hessians. Two expressions for the drift-curvature part
are provided:

``form="single"``
    ``R = grad_l . sum_k d_{k-1} Phi_{M-1,k} sum_m d_{m-1} v_m`` with
    ``v_m[p] = tr(s_{m-1}^T Phi_{M-2,m}^T H[f_p] Phi_{M-2,m} s_{m-1})`` and
    ``H[f_p]`` taken at a single evaluation point.
``form="nested"``
    the exact second-order coefficient, where the curvature of step ``k-1``
    only sees noise injected before it and is evaluated along the trajectory.

The curvature-free part is ``S = sum_m d_{m-1} tr(s^T Phi^T H_l Phi s)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..numerics import jacobian
from ..numerics.tensor import Tensor, backward, enable_grad
from .system import ParamSdeSystem

HESSIAN_POINTS = ("penultimate", "terminal")


def exact_hessian(fn, w):
    """Dense Hessian of a scalar tape function by differentiating the gradient once more."""
    return second_derivatives(lambda t: fn(t).reshape(1), w)[0]


def second_derivatives(fn, w):
    """``T[p, i, j] = d2 fn_p / dw_i dw_j`` for a vector-valued tape function, exactly."""
    w = np.asarray(w, dtype=np.float64)
    d = w.size
    with enable_grad():
        wt = Tensor(w, requires_grad=True)
        y = fn(wt)
        m = y.size
        out = np.zeros((m, d, d))
        seed = np.zeros(y.shape)
        for p in range(m):
            seed.reshape(-1)[:] = 0.0
            seed.reshape(-1)[p] = 1.0
            g = backward(y, [wt], grad_output=Tensor(seed), create_graph=True)[0]
            if not g.requires_grad:
                continue
            for q in range(d):
                e = np.zeros(d)
                e[q] = 1.0
                out[p, q] = backward(g, [wt], grad_output=Tensor(e))[0].data
    return 0.5 * (out + out.transpose(0, 2, 1))


def state_jacobians(sys: ParamSdeSystem, trajectory):
    """``J_m = I + d_m * df/dw(w_m, X_m)`` for ``m = 0 .. M-1``."""
    traj = np.asarray(trajectory)
    eye = np.eye(sys.d)
    return [eye + dm * jacobian(lambda w, m=m: sys.drift(w, sys.inputs[m]), traj[m])
            for m, dm in enumerate(sys.deltas)]


def phi_product(jacobians, m, k):
    """``Phi_{m,k} = J_m J_{m-1} ... J_k``; the identity when ``m < k``."""
    if k < 1:
        raise ContractError(f"lower index must be at least 1, got k={k}")
    d = jacobians[0].shape[0]
    if m < k:
        return np.eye(d)
    if m >= len(jacobians):
        raise ContractError(f"upper index {m} exceeds the last Jacobian {len(jacobians) - 1}")
    out = np.eye(d)
    for j in range(k, m + 1):
        out = jacobians[j] @ out
    return out


def loss_derivatives(sys: ParamSdeSystem, w):
    """Gradient and Hessian of the terminal loss at ``w``."""
    w = np.asarray(w, dtype=np.float64)
    g = jacobian(lambda t: sys.loss(t).reshape(1), w)[0]
    return g, exact_hessian(sys.loss, w)


def diffusions(sys: ParamSdeSystem, trajectory):
    return [sys.sigma(trajectory[m], m) for m in range(sys.M)]


def drift_hessians(sys: ParamSdeSystem, w, m):
    return second_derivatives(lambda t: sys.drift(t, sys.inputs[m]), w)


def compute_S_hat(sys: ParamSdeSystem, trajectory, jacobians=None, hessian=None):
    traj = np.asarray(trajectory)
    jacs = state_jacobians(sys, traj) if jacobians is None else jacobians
    H = loss_derivatives(sys, traj[-1])[1] if hessian is None else hessian
    sig = diffusions(sys, traj)
    total = 0.0
    for m in range(1, sys.M + 1):
        a = phi_product(jacs, sys.M - 1, m) @ sig[m - 1]
        total += sys.deltas[m - 1] * np.trace(a.T @ H @ a)
    return float(total)


def _curvature_vector(jacs, sig, deltas, hess, upper, last):
    """``sum_{m=1..last} d_{m-1} v_m`` with ``v_m[p] = tr(a^T H[f_p] a)``, ``a = Phi_{upper,m} s_{m-1}``."""
    acc = np.zeros(hess.shape[0])
    for m in range(1, last + 1):
        a = phi_product(jacs, upper, m) @ sig[m - 1]
        acc += deltas[m - 1] * np.einsum("ir,pij,jr->p", a, hess, a)
    return acc


def compute_R_hat(sys: ParamSdeSystem, trajectory, form="single", hessian_point="penultimate",
                  jacobians=None, grad_l=None):
    """Drift-curvature coefficient; see the module docstring for both forms."""
    traj = np.asarray(trajectory)
    jacs = state_jacobians(sys, traj) if jacobians is None else jacobians
    g = loss_derivatives(sys, traj[-1])[0] if grad_l is None else grad_l
    sig = diffusions(sys, traj)
    M, deltas = sys.M, sys.deltas
    if form == "single":
        if hessian_point not in HESSIAN_POINTS:
            raise ContractError(f"hessian_point must be one of {HESSIAN_POINTS}")
        w_eval = traj[M - 1] if hessian_point == "penultimate" else traj[M]
        hess = drift_hessians(sys, w_eval, M - 1)
        inner = _curvature_vector(jacs, sig, deltas, hess, M - 2, M)
        outer = sum(deltas[k - 1] * phi_product(jacs, M - 1, k) for k in range(1, M + 1))
        return float(g @ outer @ inner)
    if form == "nested":
        total = np.zeros(sys.d)
        for k in range(1, M + 1):
            hess = drift_hessians(sys, traj[k - 1], k - 1)
            inner = _curvature_vector(jacs, sig, deltas, hess, k - 2, k - 1)
            total += deltas[k - 1] * phi_product(jacs, M - 1, k) @ inner
        return float(g @ total)
    raise ContractError(f"unknown form {form!r}; expected 'single' or 'nested'")


def second_order_moments(sys: ParamSdeSystem, trajectory, jacobians=None, hessians=None):
    """Mean ``mu`` and covariance ``C`` of the first two path corrections by direct recursion.

    ``C_{m+1} = J C J^T + d s s^T`` and ``mu_{m+1} = J mu + d * tr(H[f] C) / 2``,
    so that ``E[l(w_M^eps)] - l(w_M) = eps**2 (g . mu_M + tr(H_l C_M) / 2) + O(eps**4)``.
    """
    traj = np.asarray(trajectory)
    jacs = state_jacobians(sys, traj) if jacobians is None else jacobians
    d = sys.d
    C = np.zeros((d, d))
    mu = np.zeros(d)
    for m, dm in enumerate(sys.deltas):
        hess = drift_hessians(sys, traj[m], m) if hessians is None else hessians[m]
        s = sys.sigma(traj[m], m)
        mu = jacs[m] @ mu + dm * 0.5 * np.einsum("pij,ij->p", hess, C)
        C = jacs[m] @ C @ jacs[m].T + dm * (s @ s.T)
    return mu, C
