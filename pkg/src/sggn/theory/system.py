"""Discretized parameter SDEs and their Euler / Euler-Maruyama rollouts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError
from ..numerics import tensor as T
from ..numerics.tensor import Tensor


@dataclass
class ParamSdeSystem:
    """``w_{m+1} = w_m + f(w_m, X_m) d_m + eps * sigma(w_m, X_m) xi_m sqrt(d_m)``.

    ``drift(w, x)`` maps ``(..., d)`` to ``(..., d)``, ``diffusion(w, x)`` maps
    ``(..., d)`` to ``(..., d, r)`` and ``loss(w)`` maps ``(..., d)`` to
    ``(...)``, all as tape functions that broadcast over leading axes. The
    maps must be smooth in ``w`` (bounded, Lipschitz derivatives up to third
    order) for the small-noise expansion to apply.
    """

    drift: Callable[[Tensor, Any], Tensor]
    diffusion: Callable[[Tensor, Any], Tensor]
    loss: Callable[[Tensor], Tensor]
    mesh: np.ndarray
    omega0: np.ndarray
    noise_dim: int
    eps: float = 0.1
    inputs: Optional[Sequence[Any]] = None
    name: str = "system"

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=np.float64)
        self.omega0 = np.asarray(self.omega0, dtype=np.float64).reshape(-1)
        if self.mesh.ndim != 1 or self.mesh.size < 2:
            raise ContractError("mesh needs at least two points")
        if self.mesh[0] != 0.0 or np.any(np.diff(self.mesh) <= 0):
            raise ContractError("mesh must start at 0 and increase strictly")
        if self.eps < 0:
            raise ContractError("eps must be nonnegative")
        if self.inputs is None:
            self.inputs = [None] * self.M
        if len(self.inputs) != self.M:
            raise ContractError(f"expected {self.M} exogenous inputs, got {len(self.inputs)}")

    @property
    def M(self):
        return self.mesh.size - 1

    @property
    def d(self):
        return self.omega0.size

    @property
    def deltas(self):
        return np.diff(self.mesh)

    @property
    def horizon(self):
        return float(self.mesh[-1])

    def with_eps(self, eps):
        return replace(self, eps=float(eps))

    # plain-array evaluations
    def f(self, w, m):
        with T.no_grad():
            return np.array(self.drift(Tensor(w), self.inputs[m]).data)

    def sigma(self, w, m):
        with T.no_grad():
            return np.array(self.diffusion(Tensor(w), self.inputs[m]).data)

    def l(self, w):
        with T.no_grad():
            return np.array(self.loss(Tensor(w)).data)


def uniform_mesh(delta, M):
    return np.arange(M + 1) * float(delta)


def rollout_deterministic(sys: ParamSdeSystem, omega0=None):
    """Forward Euler states ``w_0 .. w_M`` as an ``(M + 1, d)`` array."""
    w = np.array(sys.omega0 if omega0 is None else omega0, dtype=np.float64)
    out = [w]
    for m, dm in enumerate(sys.deltas):
        w = w + sys.f(w, m) * dm
        out.append(w)
    return np.stack(out)


def rollout_stochastic(sys: ParamSdeSystem, omega0=None, rng=None, xi=None, eps=None):
    """Euler-Maruyama terminal state(s).

    ``xi`` (shape ``(M, r)`` or ``(n, M, r)``) may be given instead of
    ``rng``; a batched ``xi`` yields ``(n, d)`` terminal states. With
    ``eps == 0`` the path is the deterministic one bit for bit.
    """
    eps = sys.eps if eps is None else float(eps)
    w0 = np.array(sys.omega0 if omega0 is None else omega0, dtype=np.float64)
    if xi is None and eps != 0:
        if rng is None:
            raise ContractError("either rng or xi is required for eps > 0")
        xi = rng.standard_normal((sys.M, sys.noise_dim))
    batched = xi is not None and np.ndim(xi) == 3
    w = np.broadcast_to(w0, (xi.shape[0], sys.d)).copy() if batched else w0
    for m, dm in enumerate(sys.deltas):
        step = w + sys.f(w, m) * dm
        if eps != 0:
            s = sys.sigma(w, m)
            z = xi[:, m] if batched else xi[m]
            noise = np.matmul(s, z[..., None])[..., 0]
            step = step + eps * noise * math.sqrt(dm)
        w = step
    return w
