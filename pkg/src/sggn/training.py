"""Losses, Adam, the alternating generator/dynamics loop and rolling evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from . import graphgen
from .datagen import TrajectoryDataset, group_conv_features, init_kernels
from .dynamics import DynamicsModel, ggn_step, model_from_json, model_to_json, sggn_step
from .errors import ContractError, DivergenceError
from .numerics import make_rng
from .numerics import tensor as T
from .numerics.autodiff import value_and_grad
from .numerics.tensor import Tensor

MODES = ("GGN", "S-GGN")


# -- metrics ------------------------------------------------------------------------
def _pair(pred, target):
    p = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if p.shape != t.shape:
        raise ContractError(f"shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def mse(pred, target):
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def mae(pred, target):
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def mse_tensor(pred: Tensor, target) -> Tensor:
    diff = pred - T.as_tensor(target)
    return T.mean(diff * diff)


# -- Adam ---------------------------------------------------------------------------
@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size))


def adam_step(params, grads, moments: AdamMoments, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_moments)``."""
    if t < 1:
        raise ContractError("Adam step counter starts at 1")
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or moments.m.shape != params.shape:
        raise ContractError("params, grads and moments must share a shape")
    m = beta1 * moments.m + (1.0 - beta1) * grads
    v = beta2 * moments.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamMoments(m, v)


# -- configuration ------------------------------------------------------------------
@dataclass
class TrainConfig:
    epochs: int = 100
    generator_steps: int = 3
    dynamics_steps: int = 7
    lr_generator: float = 1e-2
    lr_dynamics: float = 1e-3
    eps_scale: float = 0.1
    mode: str = "S-GGN"
    seed: int = 0
    batch_size: int = 8
    hidden: int = 16
    activation: str = "relu"
    tau: float = 1.0
    anneal_tau: bool = False
    noise_samples: int = 1
    divergence_factor: float = 1e6
    n_kernels: int = 4
    sub_window: int = 36

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}")
        for name in ("generator_steps", "dynamics_steps", "batch_size", "hidden", "noise_samples"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.epochs < 0:
            raise ContractError("epochs must be nonnegative")
        if self.eps_scale < 0:
            raise ContractError("eps_scale must be nonnegative")
        if self.mode == "GGN":
            self.eps_scale = 0.0


@dataclass
class TrainHistory:
    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    val_mae: List[float] = field(default_factory=list)
    spectra_epochs: List[int] = field(default_factory=list)
    wall_clock: List[float] = field(default_factory=list, compare=False)

    def rows(self):
        return list(zip(self.epochs, self.train_loss, self.val_mse, self.val_mae))


# -- the full learner -----------------------------------------------------------------
@dataclass
class SGGN:
    """Dynamics learner, network generator and (optionally) grouped-conv kernels.

    With ``kernels`` set, each sample is a history window whose last row is
    the current state; the kernels turn the window into extra node features.
    """

    model: DynamicsModel
    generator: graphgen.AdjacencyDistribution
    kernels: Optional[np.ndarray] = None
    sub_window: int = 36

    @property
    def uses_history(self):
        return self.kernels is not None

    @property
    def n_model(self):
        return len(self.model.params())

    def dynamics_vector(self):
        v = self.model.params().values
        if self.kernels is None:
            return np.array(v)
        return np.concatenate([v, self.kernels.reshape(-1)])

    def with_dynamics(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        model = self.model.with_params(vec[: self.n_model])
        kernels = None
        if self.kernels is not None:
            kernels = vec[self.n_model:].reshape(self.kernels.shape).copy()
        return replace(self, model=model, kernels=kernels)

    def with_logits(self, logits):
        return replace(self, generator=self.generator.with_logits(np.array(logits)))

    def split(self, dyn: Tensor):
        drift, diff = self.model.split_tensor(dyn[: self.n_model])
        kernels = None
        if self.kernels is not None:
            kernels = T.reshape(dyn[self.n_model:], self.kernels.shape)
        return drift, diff, kernels

    def history_len(self):
        return 2 * self.sub_window


def build_sggn(n, d_x, cfg: TrainConfig, dt, history=False, stations_kernels=True):
    rng = make_rng(cfg.seed, 1)
    d_ext = 0
    kernels = None
    if history:
        kernels = init_kernels(n, cfg.n_kernels, cfg.sub_window, rng, channels=d_x)
        d_ext = d_x * cfg.n_kernels * 2
    model = DynamicsModel.init(d_x, cfg.hidden, dt, rng, cfg.activation, d_ext=d_ext)
    gen = graphgen.AdjacencyDistribution.init(n, tau=cfg.tau)
    return SGGN(model, gen, kernels, cfg.sub_window)


def predict_one_step(net: SGGN, dyn: Tensor, inputs, adjacency, eps_scale=0.0, xi=None):
    """One-step predictions for a batch.

    Without history, every state of every window is advanced (teacher forcing);
    with history, only the last state of each window is advanced.
    """
    drift, diff, kernels = net.split(dyn)
    inputs = np.asarray(inputs)
    if kernels is not None:
        x = inputs[..., -1, :, :]
        ext = group_conv_features(inputs[..., -net.history_len():, :, :], kernels, net.sub_window)
    else:
        x, ext = inputs, None
    if eps_scale > 0:
        return sggn_step(x, adjacency, net.model, eps_scale, ext=ext, xi=xi, drift=drift, diffusion=diff)
    return ggn_step(x, adjacency, net.model, ext=ext, drift=drift)


def batch_targets(net: SGGN, targets):
    targets = np.asarray(targets)
    return targets[..., -1, :, :] if net.uses_history else targets


def _loss_tensor(net, dyn, logits, inputs, targets, gumbels, xi, eps_scale, tau=None):
    adj = graphgen.relaxed_adjacency(logits, net.generator.n, tau or net.generator.tau, gumbels)
    pred = predict_one_step(net, dyn, inputs, adj, eps_scale, xi)
    return mse_tensor(pred, batch_targets(net, targets))


def _draw_noise(net, inputs, rng, eps_scale, samples=1):
    """Gumbel noise for one adjacency sample and ``samples`` diffusion draws.

    With ``samples > 1`` the draws stack on a leading axis and the loss
    averages over them through broadcasting.
    """
    gumbels = graphgen.sample_standard_gumbel(net.generator.logits.shape, rng)
    xi = None
    if eps_scale > 0:
        shape = np.asarray(batch_targets(net, inputs)).shape
        xi = rng.standard_normal(shape if samples == 1 else (samples,) + shape)
    return gumbels, xi


def stochastic_loss(net: SGGN, batch, eps_scale, rng):
    """Mean one-step MSE with one adjacency sample and one noise draw per step."""
    inputs, targets = batch
    gumbels, xi = _draw_noise(net, inputs, rng, eps_scale)
    with T.no_grad():
        loss = _loss_tensor(net, Tensor(net.dynamics_vector()), net.generator.logits,
                            inputs, targets, gumbels, xi, eps_scale)
    return loss.item()


def deterministic_loss_fn(net: SGGN, inputs, targets, hard=True):
    """Noise-off loss of the dynamics vector with the generator frozen at its mode."""
    adj = graphgen.mode_adjacency(net.generator, hard=hard).weights.detach()

    def fn(dyn):
        pred = predict_one_step(net, dyn, inputs, adj, 0.0)
        return mse_tensor(pred, batch_targets(net, targets))

    return fn


# -- alternating optimisation -----------------------------------------------------------
def train_alternating(data: TrajectoryDataset, cfg: TrainConfig, net: Optional[SGGN] = None,
                      val: Optional[TrajectoryDataset] = None,
                      hook: Optional[Callable[[int, SGGN], None]] = None,
                      history_window=False):
    """Alternate Adam steps on generator logits and dynamics weights.

    Each epoch runs ``generator_steps`` updates of the logits with the
    dynamics frozen, then ``dynamics_steps`` updates of the dynamics with the
    logits frozen. ``hook(epoch, net)`` fires at epoch 0 and after each epoch.
    Returns ``(net, history)``.
    """
    if len(data) == 0:
        raise ContractError("training data is empty")
    n, d_x = data.inputs.shape[-2:]
    if net is None:
        net = build_sggn(n, d_x, cfg, data.dt, history=history_window)
    rng = make_rng(cfg.seed, 2)
    hist = TrainHistory()
    if hook is not None:
        hook(0, net)
    if cfg.epochs == 0:
        return net, hist

    dyn = net.dynamics_vector()
    logits = np.array(net.generator.logits)
    dyn_m, gen_m = AdamMoments.zeros(dyn.size), AdamMoments.zeros(logits.size)
    t_dyn = t_gen = 0
    initial = None
    count = len(data)
    bs = min(cfg.batch_size, count)

    def step_loss(which, epoch):
        idx = np.sort(rng.choice(count, size=bs, replace=False))
        inputs, targets = data.inputs[idx], data.targets[idx]
        gumbels, xi = _draw_noise(net, inputs, rng, cfg.eps_scale, cfg.noise_samples)
        tau = graphgen.annealed_tau(epoch, net.generator.tau) if cfg.anneal_tau else net.generator.tau
        if which == "gen":
            fn = lambda lg: _loss_tensor(net, Tensor(dyn), T.reshape(lg, logits.shape), inputs,
                                         targets, gumbels, xi, cfg.eps_scale, tau)
            return value_and_grad(fn, logits.reshape(-1))
        fn = lambda dv: _loss_tensor(net, dv, logits, inputs, targets, gumbels, xi, cfg.eps_scale, tau)
        return value_and_grad(fn, dyn)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for _ in range(cfg.generator_steps):
            loss, g = step_loss("gen", epoch)
            t_gen += 1
            flat, gen_m = adam_step(logits.reshape(-1), g, gen_m, t_gen, cfg.lr_generator)
            logits = flat.reshape(logits.shape)
            losses.append(loss)
        for _ in range(cfg.dynamics_steps):
            loss, g = step_loss("dyn", epoch)
            t_dyn += 1
            dyn, dyn_m = adam_step(dyn, g, dyn_m, t_dyn, cfg.lr_dynamics)
            losses.append(loss)
        net = net.with_dynamics(dyn).with_logits(logits)
        epoch_loss = float(np.mean(losses))
        if initial is None:
            initial = max(losses[0], 1e-300)
        hist.epochs.append(epoch)
        hist.train_loss.append(epoch_loss)
        if val is not None and len(val):
            vm, va = one_step_metrics(net, val)
        else:
            vm = va = float("nan")
        hist.val_mse.append(vm)
        hist.val_mae.append(va)
        hist.wall_clock.append(time.perf_counter() - t0)
        if not math.isfinite(epoch_loss) or epoch_loss > cfg.divergence_factor * initial:
            raise DivergenceError(
                f"epoch {epoch}: loss {epoch_loss:.3e} exceeds {cfg.divergence_factor:.0e} x "
                f"initial {initial:.3e}", history=hist)
        if hook is not None:
            hook(epoch, net)
    return net, hist


def one_step_metrics(net: SGGN, data: TrajectoryDataset, chunk=64):
    adj = graphgen.mode_adjacency(net.generator, hard=False).weights
    dyn = Tensor(net.dynamics_vector())
    preds, tgts = [], []
    with T.no_grad():
        for lo in range(0, len(data), chunk):
            inp = data.inputs[lo:lo + chunk]
            preds.append(predict_one_step(net, dyn, inp, adj).data)
            tgts.append(batch_targets(net, data.targets[lo:lo + chunk]))
    p, t = np.concatenate(preds), np.concatenate(tgts)
    return mse(p, t), mae(p, t)


# -- rolling prediction and evaluation ---------------------------------------------------
def rolling_predict(net: SGGN, primer, horizon, adjacency=None, eps_scale=0.0, rng=None):
    """Autoregressive forecast of ``horizon`` states after the primer.

    Only the primer is read; each prediction is appended to the history and
    fed back. ``eps_scale > 0`` (with ``rng``) draws a stochastic path.
    """
    primer = np.asarray(primer, dtype=np.float64)
    if primer.shape[0] < 1:
        raise ContractError("primer must contain at least one state")
    if net.uses_history and primer.shape[0] < net.history_len():
        raise ContractError(f"primer needs at least {net.history_len()} states")
    n, d = primer.shape[1:]
    if horizon <= 0:
        return np.zeros((0, n, d))
    if adjacency is None:
        adjacency = graphgen.mode_adjacency(net.generator, hard=False).weights
    dyn = Tensor(net.dynamics_vector())
    buf = [row for row in primer[-net.history_len():]] if net.uses_history else [primer[-1]]
    out = np.zeros((horizon, n, d))
    with T.no_grad():
        for k in range(horizon):
            inp = np.stack(buf) if net.uses_history else buf[-1]
            xi = rng.standard_normal((n, d)) if eps_scale > 0 else None
            nxt = np.array(predict_one_step(net, dyn, inp, adjacency, eps_scale, xi).data)
            out[k] = nxt
            if net.uses_history:
                buf = buf[1:] + [nxt]
            else:
                buf = [nxt]
    return out


@dataclass
class EvalResult:
    mse: float
    mae: float
    mse_by_horizon: np.ndarray
    mae_by_horizon: np.ndarray
    predictions: np.ndarray  # (windows, horizon, N, d)
    truth: np.ndarray
    starts: np.ndarray
    band_lo: Optional[np.ndarray] = None
    band_hi: Optional[np.ndarray] = None


def evaluate(net: SGGN, series, primer_len, horizon, mode="GGN", stride=None, mc_draws=0,
             eps_scale=0.1, quantiles=(0.05, 0.95), seed=0):
    """Rolling-forecast metrics over a held-out series.

    Point predictions are drift-only for both modes. For S-GGN with
    ``mc_draws > 0`` a quantile band over stochastic rollouts is attached.
    """
    series = np.asarray(series, dtype=np.float64)
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    if horizon < 1:
        raise ContractError("horizon must be positive")
    stride = stride or horizon
    last = series.shape[0] - primer_len - horizon
    if last < 0:
        raise ContractError("test series is too short for one primer + horizon")
    starts = np.arange(0, last + 1, stride)
    adj = graphgen.mode_adjacency(net.generator, hard=False).weights
    preds, truth, los, his = [], [], [], []
    for s in starts:
        primer = series[s:s + primer_len]
        preds.append(rolling_predict(net, primer, horizon, adj))
        truth.append(series[s + primer_len:s + primer_len + horizon])
        if mode == "S-GGN" and mc_draws > 0:
            rng = make_rng(seed, 3, int(s))
            draws = np.stack([rolling_predict(net, primer, horizon, adj, eps_scale, rng)
                              for _ in range(mc_draws)])
            los.append(np.quantile(draws, quantiles[0], axis=0))
            his.append(np.quantile(draws, quantiles[1], axis=0))
    p, t = np.stack(preds), np.stack(truth)
    err = p - t
    res = EvalResult(mse(p, t), mae(p, t),
                     np.mean(err ** 2, axis=(0, 2, 3)), np.mean(np.abs(err), axis=(0, 2, 3)),
                     p, t, starts)
    if los:
        res.band_lo, res.band_hi = np.stack(los), np.stack(his)
    return res


# -- checkpoints -----------------------------------------------------------------------
def net_to_json(net: SGGN, meta=None) -> str:
    extra = {"generator.logits": net.generator.logits}
    if net.kernels is not None:
        extra["kernels"] = net.kernels
    doc = {"nodes": net.generator.n, "tau": net.generator.tau, "sub_window": net.sub_window,
           **(meta or {})}
    return model_to_json(net.model, extra, doc)


def net_from_json(text: str):
    """Inverse of ``net_to_json``; returns ``(net, meta)``."""
    model, rest, meta = model_from_json(text)
    if "generator.logits" not in rest:
        raise ContractError("checkpoint has no generator logits")
    gen = graphgen.AdjacencyDistribution(int(meta["nodes"]), rest["generator.logits"],
                                         float(meta.get("tau", 1.0)))
    net = SGGN(model, gen, rest.get("kernels"), int(meta.get("sub_window", 36)))
    return net, meta
