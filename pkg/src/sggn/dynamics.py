"""Dynamics learner: a four-map graph network used for both drift and diffusion.

One block maps node states ``X`` (``N x d``) and an adjacency ``A`` to an
``N x d_out`` output::

    H_e1 = act(v2e([x_i, x_j]))        pairwise concatenation, N x N x 2d
    H_e2 = act(e(H_e1))
    H_v1 = act(e2v(sum_j A_ij H_e2[i, j]))
    out  = v(H_v1)                     identity output map

The deterministic step is ``X + f(X, A) dt``; the stochastic step adds
``eps * (sigma(X, A) * xi) * sqrt(dt)`` with ``xi`` standard normal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ContractError
from .io import dumps17
from .numerics import tensor as T
from .numerics.params import ParamVector
from .numerics.tensor import Tensor

ACTIVATIONS = {
    "relu": T.relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "identity": lambda x: x,
}

MAPS = ("v2e", "e", "e2v", "v")


def block_shapes(d_in, hidden, d_out=None):
    d_out = d_in if d_out is None else d_out
    return {
        "v2e.W": (2 * d_in, hidden), "v2e.b": (hidden,),
        "e.W": (hidden, hidden), "e.b": (hidden,),
        "e2v.W": (hidden, hidden), "e2v.b": (hidden,),
        "v.W": (hidden, d_out), "v.b": (d_out,),
    }


def block_param_count(d_in, hidden, d_out=None):
    return sum(int(np.prod(s)) for s in block_shapes(d_in, hidden, d_out).values())


@dataclass
class GnnBlockWeights:
    weights: Dict[str, np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        d_in = self.weights["v2e.W"].shape[0] // 2
        hidden = self.weights["e.W"].shape[0]
        d_out = self.weights["v.W"].shape[1]
        for name, shape in block_shapes(d_in, hidden, d_out).items():
            if self.weights[name].shape != shape:
                raise ContractError(f"{name} has shape {self.weights[name].shape}, expected {shape}")

    @property
    def d_in(self):
        return self.weights["v2e.W"].shape[0] // 2

    @property
    def d_out(self):
        return self.weights["v.W"].shape[1]

    @property
    def hidden(self):
        return self.weights["e.W"].shape[0]

    @classmethod
    def init(cls, d_in, hidden, rng, activation="relu", d_out=None):
        """Uniform in +-1/sqrt(fan_in) for weights and biases alike."""
        shapes = block_shapes(d_in, hidden, d_out)
        weights = {}
        for m in MAPS:
            fan_in = shapes[f"{m}.W"][0]
            bound = 1.0 / math.sqrt(fan_in)
            weights[f"{m}.W"] = rng.uniform(-bound, bound, shapes[f"{m}.W"])
            weights[f"{m}.b"] = rng.uniform(-bound, bound, shapes[f"{m}.b"])
        return cls(weights, activation)

    @classmethod
    def zeros(cls, d_in, hidden, activation="relu", d_out=None):
        return cls({k: np.zeros(s) for k, s in block_shapes(d_in, hidden, d_out).items()}, activation)

    def tensors(self):
        return {k: Tensor(v) for k, v in self.weights.items()}


@dataclass
class DynamicsModel:
    drift: GnnBlockWeights
    diffusion: GnnBlockWeights
    dt: float

    def __post_init__(self):
        if not self.dt >= 0:
            raise ContractError("dt must be nonnegative")
        if (self.drift.d_in, self.drift.hidden, self.drift.d_out) != (
                self.diffusion.d_in, self.diffusion.hidden, self.diffusion.d_out):
            raise ContractError("drift and diffusion must share architecture dimensions")

    @classmethod
    def init(cls, d_x, hidden, dt, rng, activation="relu", d_ext=0):
        d_in = d_x + d_ext
        return cls(GnnBlockWeights.init(d_in, hidden, rng, activation, d_x),
                   GnnBlockWeights.init(d_in, hidden, rng, activation, d_x), dt)

    def params(self) -> ParamVector:
        named = {f"drift.{k}": v for k, v in self.drift.weights.items()}
        named.update({f"diffusion.{k}": v for k, v in self.diffusion.weights.items()})
        return ParamVector.flatten(named)

    def with_params(self, values) -> "DynamicsModel":
        arrays = self.params().unflatten(np.asarray(values, dtype=np.float64))
        drift = {k[len("drift."):]: np.array(v) for k, v in arrays.items() if k.startswith("drift.")}
        diff = {k[len("diffusion."):]: np.array(v) for k, v in arrays.items() if k.startswith("diffusion.")}
        return DynamicsModel(GnnBlockWeights(drift, self.drift.activation),
                             GnnBlockWeights(diff, self.diffusion.activation), self.dt)

    def split_tensor(self, flat: Tensor):
        """Named weight tensors for (drift, diffusion) sliced out of a flat tape tensor."""
        layout = self.params().layout
        drift, diff = {}, {}
        for name, (lo, hi, shape) in layout.items():
            t = T.reshape(flat[..., lo:hi], flat.shape[:-1] + shape)
            if name.startswith("drift."):
                drift[name[len("drift."):]] = t
            else:
                diff[name[len("diffusion."):]] = t
        return drift, diff


def pairwise_concat(x):
    """``out[..., i, j, :] = concat(x[..., i, :], x[..., j, :])``."""
    x = T.as_tensor(x)
    *lead, n, d = x.shape
    lead = tuple(lead)
    xi = T.broadcast_to(T.reshape(x, lead + (n, 1, d)), lead + (n, n, d))
    xj = T.broadcast_to(T.reshape(x, lead + (1, n, d)), lead + (n, n, d))
    return T.concatenate([xi, xj], axis=-1)


def _linear(h, w, extra=0):
    """``h @ w`` where ``w`` may carry leading batch axes of its own."""
    if w.ndim == 2:
        flat = T.matmul(T.reshape(h, (-1, h.shape[-1])), w)
        return T.reshape(flat, h.shape[:-1] + (w.shape[-1],))
    wl = w.shape[:-2]
    return T.matmul(h, T.reshape(w, wl + (1,) * extra + w.shape[-2:]))


def _bias(b, extra):
    wl = b.shape[:-1]
    return b if not wl else T.reshape(b, wl + (1,) * (extra + 1) + b.shape[-1:])


def _affine(h, w, b, extra):
    return _linear(h, w, extra) + _bias(b, extra)


def _edge_affine(x, w, b):
    """``affine(pairwise_concat(x))`` computed as a receiver part plus a sender part."""
    d = x.shape[-1]
    recv = _linear(x, w[..., :d, :])
    send = _linear(x, w[..., d:, :])
    lead = recv.shape[:-2]
    n, h = recv.shape[-2:]
    return (T.reshape(recv, lead + (n, 1, h)) + T.reshape(send, lead + (1, n, h))) + _bias(b, 1)


def gnn_forward(x, adjacency, weights, activation="relu"):
    """Apply one four-map block.

    ``x`` has shape ``(..., N, d_in)``; ``adjacency`` is ``(N, N)`` or batched
    to match; ``weights`` maps names to arrays or tensors (a ``GnnBlockWeights``
    is also accepted). Returns ``(..., N, d_out)``.
    """
    if isinstance(weights, GnnBlockWeights):
        activation = weights.activation
        weights = weights.weights
    act = ACTIVATIONS[activation]
    w = {k: T.as_tensor(v) for k, v in weights.items()}
    x = T.as_tensor(x)
    a = adjacency.weights if hasattr(adjacency, "weights") else T.as_tensor(adjacency)
    n, d = x.shape[-2:]
    if w["v2e.W"].shape[-2] != 2 * d:
        raise ContractError(f"block expects {w['v2e.W'].shape[-2] // 2} input features, got {d}")
    if a.shape[-2:] != (n, n):
        raise ContractError(f"adjacency shape {a.shape} does not match {n} nodes")
    h_e1 = act(_edge_affine(x, w["v2e.W"], w["v2e.b"]))
    h_e2 = act(_affine(h_e1, w["e.W"], w["e.b"], 1))
    masked = h_e2 * T.reshape(a, a.shape + (1,))
    agg = T.sum_(masked, axis=-2)
    h_v1 = act(_affine(agg, w["e2v.W"], w["e2v.b"], 0))
    return _affine(h_v1, w["v.W"], w["v.b"], 0)


def _node_input(x, ext):
    if ext is None:
        return T.as_tensor(x)
    return T.concatenate([T.as_tensor(x), T.as_tensor(ext)], axis=-1)


def ggn_step(x, adjacency, model: DynamicsModel, ext=None, drift=None):
    """``X + f(X, A) dt``; ``ext`` are optional extra node features fed to the block."""
    x = T.as_tensor(x)
    f = gnn_forward(_node_input(x, ext), adjacency,
                    drift if drift is not None else model.drift.weights, model.drift.activation)
    return x + f * model.dt


def sggn_step(x, adjacency, model: DynamicsModel, eps_scale, rng=None, ext=None, xi=None,
              drift=None, diffusion=None):
    """``ggn_step + eps * (sigma(X, A) * xi) * sqrt(dt)``.

    Either ``rng`` or a pre-drawn ``xi`` supplies the standard normal noise.
    With ``eps_scale == 0`` the result is bit-identical to ``ggn_step``.
    """
    if eps_scale < 0:
        raise ContractError("eps_scale must be nonnegative")
    det = ggn_step(x, adjacency, model, ext, drift)
    if eps_scale == 0:
        return det
    if xi is None:
        xi = rng.standard_normal(det.shape)
    s = gnn_forward(_node_input(x, ext), adjacency,
                    diffusion if diffusion is not None else model.diffusion.weights,
                    model.diffusion.activation)
    return det + s * Tensor(xi) * (eps_scale * math.sqrt(model.dt))


def rollout(x0, adjacency_sampler, model, steps, mode="deterministic", rng=None, eps_scale=1.0):
    """Free-running trajectory ``[X_0, ..., X_steps]`` (plain arrays).

    ``adjacency_sampler`` is called once per step with the step index.
    """
    if steps < 0:
        raise ContractError("steps must be nonnegative")
    states = [np.array(T.as_tensor(x0).data)]
    with T.no_grad():
        for k in range(steps):
            a = adjacency_sampler(k)
            if mode == "deterministic":
                nxt = ggn_step(states[-1], a, model)
            elif mode == "stochastic":
                nxt = sggn_step(states[-1], a, model, eps_scale, rng)
            else:
                raise ContractError(f"unknown rollout mode {mode!r}")
            states.append(np.array(nxt.data))
    return states


# -- checkpoints -----------------------------------------------------------------
def model_to_json(model: DynamicsModel, extra_params=None, meta=None) -> str:
    """Checkpoint as a flat named-parameter list (name, shape, row-major values).

    ``extra_params`` adds further named arrays (generator logits, conv
    kernels); ``meta`` is an arbitrary JSON-able dict.
    """
    named = dict(model.params().unflatten())
    for name, arr in (extra_params or {}).items():
        named[name] = np.asarray(arr, dtype=np.float64)
    params = [{"name": name, "shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}
              for name, arr in named.items()]
    doc = {"format": "sggn-checkpoint/1", "dt": float(model.dt),
           "activation": model.drift.activation, "parameters": params, "meta": meta or {}}
    return dumps17(doc)


def model_from_json(text: str):
    doc = json.loads(text)
    arrays = {p["name"]: np.array(p["values"], dtype=np.float64).reshape(p["shape"])
              for p in doc["parameters"]}
    act = doc.get("activation", "relu")
    drift = {k[len("drift."):]: v for k, v in arrays.items() if k.startswith("drift.")}
    diff = {k[len("diffusion."):]: v for k, v in arrays.items() if k.startswith("diffusion.")}
    model = DynamicsModel(GnnBlockWeights(drift, act), GnnBlockWeights(diff, act), float(doc["dt"]))
    rest = {k: v for k, v in arrays.items() if not k.startswith(("drift.", "diffusion."))}
    return model, rest, doc.get("meta", {})
