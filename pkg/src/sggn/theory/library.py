"""Built-in parameter systems, from hand-checkable scalars to a miniature graph learner."""

from __future__ import annotations

import numpy as np

from ..datagen import default_kuramoto, kuramoto_features, simulate_kuramoto
from ..dynamics import block_shapes, gnn_forward
from ..errors import ContractError
from ..numerics import make_rng
from ..numerics import tensor as T
from ..numerics.tensor import Tensor, backward, enable_grad
from .system import ParamSdeSystem, uniform_mesh


def constant_diffusion(matrix):
    """Diffusion that ignores ``w`` and returns ``matrix`` broadcast over leading axes."""
    s = np.atleast_2d(np.asarray(matrix, dtype=np.float64))

    def diffusion(w, x):
        return T.broadcast_to(Tensor(s), w.shape[:-1] + s.shape)
    return diffusion


def _zero_drift(w, x):
    return w * 0.0


def _half_square(w):
    return 0.5 * T.sum_(w * w, axis=-1)


def pure_noise(s=1.0, delta=0.5, omega0=0.3, eps=0.1, M=1):
    """``f = 0``, ``sigma = s``, ``l = w**2 / 2``; the gap is ``eps**2 s**2 T / 2`` exactly."""
    return ParamSdeSystem(_zero_drift, constant_diffusion([[s]]), _half_square,
                          uniform_mesh(delta, M), [omega0], noise_dim=1, eps=eps,
                          name="pure-noise")


def linear_quadratic(B, S, Q, omega0, delta=0.1, M=4, c=None, eps=0.1):
    """``f = B w``, constant ``sigma = S``, ``l = w^T Q w / 2 + c . w``."""
    B, Q = np.asarray(B, float), np.asarray(Q, float)
    c = np.zeros(B.shape[0]) if c is None else np.asarray(c, float)
    Bt, Qt, ct = Tensor(B.T), Tensor(0.5 * (Q + Q.T)), Tensor(c)

    def drift(w, x):
        return T.matmul(T.expand_dims(w, -2), Bt)[..., 0, :]

    def loss(w):
        quad = T.matmul(T.expand_dims(w, -2), Qt)[..., 0, :]
        return T.sum_(0.5 * quad * w + ct * w, axis=-1)

    S = np.atleast_2d(np.asarray(S, float))
    return ParamSdeSystem(drift, constant_diffusion(S), loss, uniform_mesh(delta, M), omega0,
                          noise_dim=S.shape[1], eps=eps, name="linear-quadratic")


def default_linear_quadratic(delta=0.1, M=4, eps=0.1):
    B = np.array([[-0.5, 0.3], [-0.2, -0.8]])
    S = np.array([[0.7, 0.1], [0.0, 0.4]])
    Q = np.array([[1.0, 0.2], [0.2, 2.0]])
    return linear_quadratic(B, S, Q, [0.5, -0.4], delta, M, c=[0.1, 0.3], eps=eps)


def scalar_quadratic_drift(a=1.0, s=1.0, delta=0.1, M=4, omega0=0.5, eps=0.1):
    """``f = a w**2 / 2``, ``sigma = s``, ``l = w**2 / 2`` in one dimension."""
    def drift(w, x):
        return (0.5 * a) * w * w
    return ParamSdeSystem(drift, constant_diffusion([[s]]), _half_square,
                          uniform_mesh(delta, M), [omega0], noise_dim=1, eps=eps,
                          name="scalar-quadratic-drift")


def power_loss(power, s=1.0, delta=0.5, omega0=0.7, eps=0.1):
    """``f = 0``, ``sigma = s``, ``l = w**power / power`` with ``M = 1``."""
    if power not in (3, 4):
        raise ContractError("power must be 3 or 4")

    def loss(w):
        return T.sum_(T.power(w, power) * (1.0 / power), axis=-1)
    return ParamSdeSystem(_zero_drift, constant_diffusion([[s]]), loss, uniform_mesh(delta, 1),
                          [omega0], noise_dim=1, eps=eps, name=f"power{power}-loss")


class MiniGraphLearner:
    """Gradient flow of a tiny tanh graph learner's one-step loss, as a parameter system.

    The parameters are the drift block of a single-feature graph network on a
    complete graph. The drift is ``-grad L(w; X_m)`` for the training batch
    of step ``m``; the terminal loss is the mean one-step error on all
    transitions. Noise is diagonal, ``s * (1 + 0.3 tanh(w))``.
    """

    def __init__(self, nodes=3, hidden=2, batches=None, all_pairs=None, dt=0.1, s=1.0):
        self.nodes, self.hidden, self.dt, self.s = nodes, hidden, dt, s
        self.shapes = block_shapes(1, hidden)
        self.layout = {}
        lo = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape))
            self.layout[name] = (lo, lo + size, shape)
            lo += size
        self.dim = lo
        self.adjacency = Tensor(np.ones((nodes, nodes)) - np.eye(nodes))
        self.batches = batches
        self.all_pairs = all_pairs

    def unpack(self, w):
        lead = w.shape[:-1]
        pad = (1,) if lead else ()
        return {name: T.reshape(w[..., lo:hi], lead + pad + shape)
                for name, (lo, hi, shape) in self.layout.items()}

    def batch_loss(self, w, pair):
        x, y = pair
        pred = Tensor(x) + gnn_forward(x, self.adjacency, self.unpack(w), "tanh") * self.dt
        err = pred - Tensor(y)
        return T.mean(T.reshape(err * err, err.shape[:-3] + (-1,)), axis=-1)

    def drift(self, w, pair):
        track = w.requires_grad
        wt = w if track else Tensor(w.data, requires_grad=True)
        with enable_grad():
            L = self.batch_loss(wt, pair)
            g = backward(T.sum_(L), [wt], create_graph=track)[0]
        return -g

    def diffusion(self, w, x):
        lead = w.shape[:-1]
        diag = self.s * (1.0 + 0.3 * T.tanh(w))
        eye = Tensor(np.eye(self.dim))
        return T.reshape(diag, lead + (self.dim, 1)) * eye

    def loss(self, w):
        return self.batch_loss(w, self.all_pairs)


def mini_sggn(seed=3, nodes=3, hidden=2, M=5, delta=0.2, batch=2, eps=0.1, s=0.2):
    """Miniature graph-learner system (``d_w = 21`` with the defaults)."""
    rng = make_rng(seed, "mini-sggn")
    cfg = default_kuramoto(rng, n=nodes, p=1.0, coupling=1.0, h=0.05, steps=40)
    phases, freqs = simulate_kuramoto(cfg)
    series = kuramoto_features(phases, freqs)[:, :, :1]
    x_all, y_all = series[:-1], series[1:]
    picks = [rng.choice(len(x_all), size=batch, replace=False) for _ in range(M)]
    learner = MiniGraphLearner(nodes, hidden, None, (x_all, y_all), dt=cfg.h, s=s)
    inputs = [(x_all[p], y_all[p]) for p in picks]
    w0 = 0.5 * make_rng(seed, "mini-sggn", "init").standard_normal(learner.dim)
    sys = ParamSdeSystem(learner.drift, learner.diffusion, learner.loss, uniform_mesh(delta, M),
                         w0, noise_dim=learner.dim, eps=eps, inputs=inputs, name="mini-sggn")
    return sys


SYSTEMS = {
    "pure-noise": pure_noise,
    "linear-quadratic": default_linear_quadratic,
    "scalar-quadratic-drift": scalar_quadratic_drift,
    "quartic-loss": lambda **kw: power_loss(4, **kw),
    "cubic-loss": lambda **kw: power_loss(3, **kw),
    "mini-sggn": mini_sggn,
}


def make_system(name, **kwargs):
    if name not in SYSTEMS:
        raise ContractError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}")
    return SYSTEMS[name](**kwargs)


def delta_family(name, M=4, **kwargs):
    """Callable ``delta -> system`` with ``M`` and the maps held fixed."""
    if name == "linear-quadratic":
        return lambda delta: default_linear_quadratic(delta=delta, M=M, **kwargs)
    if name in ("pure-noise", "scalar-quadratic-drift", "mini-sggn"):
        return lambda delta: SYSTEMS[name](delta=delta, M=M, **kwargs)
    raise ContractError(f"system {name!r} has no delta family")
