"""Implementations of the CLI subcommands; each returns a process exit code."""

from __future__ import annotations

import os

import numpy as np

from . import datagen
from .config import ConfigError, ExperimentConfig
from .errors import ContractError, DivergenceError
from .experiments import (
    evaluate_on_task,
    make_task,
    task_from_bundle,
    task_manifest,
    task_tensors,
    train_on_task,
)
from .io import write_json, write_rows
from .spectral import SpectrumTracker, write_spectral_summary
from .theory import delta_bound_check, delta_family, epsilon_scaling_check, make_system
from .training import MODES, TrainConfig, net_from_json, net_to_json, one_step_metrics, rolling_predict

TASK_WINDOWS = {"kuramoto": 20, "channel": 72}
FEATURE_NAMES = {"kuramoto": ("sin_theta", "dtheta"), "channel": ("re", "im")}


def _prepare(cfg: ExperimentConfig, command):
    out = cfg.output_dir(command)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    return out


def _task_kwargs(cfg: ExperimentConfig):
    d = cfg.data
    window = d.window or TASK_WINDOWS.get(d.task, 0)
    if d.task == "kuramoto":
        return dict(nodes=d.nodes, edge_prob=d.edge_prob, coupling=d.coupling, h=d.h,
                    steps=d.steps, subsample=d.subsample, window=window)
    if d.task == "channel":
        return dict(stations=d.stations, length=d.length, noise_level=d.noise_level,
                    max_doppler=d.max_doppler, spacing=d.spacing, window=window)
    raise ConfigError(f"unknown task {d.task!r}")


def cmd_simulate(cfg: ExperimentConfig):
    task = make_task(cfg.data.task, cfg.seed, **_task_kwargs(cfg))
    out = _prepare(cfg, "simulate")
    datagen.write_bundle(os.path.join(out, "data"), task_tensors(task), task_manifest(task))
    return 0


def _load_task(path):
    if not path:
        raise ConfigError("train.dataset must name a dataset directory written by 'simulate'")
    if not os.path.isfile(os.path.join(path, "manifest.json")):
        raise ConfigError(f"no dataset manifest under {path!r}")
    return task_from_bundle(*datagen.read_bundle(path))


def train_config(cfg: ExperimentConfig, mode=None):
    t = cfg.train
    mode = mode or t.mode
    if mode not in MODES:
        raise ConfigError(f"train.mode must be one of {MODES}")
    return TrainConfig(
        epochs=t.epochs, generator_steps=t.generator_steps, dynamics_steps=t.dynamics_steps,
        lr_generator=t.lr_generator, lr_dynamics=t.lr_dynamics, eps_scale=t.eps_scale, mode=mode,
        seed=cfg.seed, batch_size=t.batch_size, hidden=t.hidden, activation=t.activation, tau=t.tau,
        anneal_tau=t.anneal_tau, noise_samples=t.noise_samples,
        divergence_factor=t.divergence_factor, n_kernels=t.n_kernels, sub_window=t.sub_window)


def _history_rows(hist):
    return [[e, float(a), float(b), float(c)] for e, a, b, c in hist.rows()]


HISTORY_HEADER = ("epoch", "train_loss", "val_mse", "val_mae")


def _tracker(cfg, task, mode, tcfg):
    ds, _ = task.datasets()
    n = min(cfg.spectral.windows, len(ds))
    return SpectrumTracker(mode, ds.inputs[:n], ds.targets[:n], tcfg.epochs, cfg.spectral.every,
                           cfg.spectral.k, cfg.spectral.dense_limit, seed=cfg.seed)


def _train_one(cfg, task, out, mode, tracker=None, prefix=""):
    tcfg = train_config(cfg, mode)
    try:
        net, hist = train_on_task(task, tcfg, hook=tracker)
    except DivergenceError as exc:
        if exc.history is not None:
            write_rows(os.path.join(out, f"{prefix}history.csv"), HISTORY_HEADER,
                       _history_rows(exc.history))
        raise
    write_rows(os.path.join(out, f"{prefix}history.csv"), HISTORY_HEADER, _history_rows(hist))
    with open(os.path.join(out, f"{prefix}checkpoint.json"), "w") as fh:
        fh.write(net_to_json(net, {"task": task.name, "window": task.window}))
    _, vds = task.datasets()
    vm, va = one_step_metrics(net, vds)
    ev = evaluate_on_task(net, task, cfg.train.horizon, tcfg.mode, mc_draws=cfg.train.mc_draws,
                          eps_scale=tcfg.eps_scale, seed=cfg.seed)
    metrics = {"val_one_step_mse": vm, "val_one_step_mae": va, "test_rolling_mse": ev.mse,
               "test_rolling_mae": ev.mae, "test_windows": int(len(ev.starts)),
               "horizon": cfg.train.horizon, "mse_by_horizon": ev.mse_by_horizon,
               "mae_by_horizon": ev.mae_by_horizon}
    write_json(os.path.join(out, f"{prefix}metrics.json"), metrics)
    return net, metrics


def cmd_train(cfg: ExperimentConfig):
    task = _load_task(cfg.train.dataset)
    out = _prepare(cfg, "train")
    tracker = _tracker(cfg, task, cfg.train.mode, train_config(cfg)) if cfg.train.spectra else None
    _train_one(cfg, task, out, cfg.train.mode, tracker)
    if tracker is not None:
        tracker.report.write(out)
        write_spectral_summary(os.path.join(out, "spectral_summary.json"),
                               {cfg.train.mode: tracker.report})
    return 0


def cmd_spectra(cfg: ExperimentConfig):
    """Train both modes on the same data and seed, capturing Hessian spectra for each."""
    task = _load_task(cfg.train.dataset)
    out = _prepare(cfg, "spectra")
    reports = {}
    for mode in MODES:
        tracker = _tracker(cfg, task, mode, train_config(cfg, mode))
        prefix = mode.lower().replace("-", "") + "_"
        _train_one(cfg, task, out, mode, tracker, prefix)
        tracker.report.write(out)
        reports[mode] = tracker.report
    write_spectral_summary(os.path.join(out, "spectral_summary.json"), reports)
    return 0


def cmd_verify(cfg: ExperimentConfig):
    th = cfg.theory
    sys_ = make_system(th.system)
    report = epsilon_scaling_check(sys_, th.eps_ladder, th.pairs, cfg.seed, th.hessian_point,
                                   th.control_variate, th.tol)
    out = _prepare(cfg, "verify")
    report.write(out)
    code = report.exit_code
    try:
        family = delta_family(th.system, M=th.delta_steps)
    except ContractError:
        family = None
    if family is not None:
        res = delta_bound_check(family, th.delta_ladder, th.delta_tol, th.delta_form, th.hessian_point)
        write_json(os.path.join(out, "delta_bound.json"), res.to_dict())
        if code == 0 and not res.passed:
            code = 5
    return code


def cmd_predict(cfg: ExperimentConfig):
    p = cfg.predict
    task = _load_task(cfg.train.dataset)
    nets = {}
    for label, path in (("ggn", p.ggn_checkpoint), ("sggn", p.sggn_checkpoint)):
        if not path:
            raise ConfigError(f"predict.{label}_checkpoint is required")
        with open(path) as fh:
            net, _ = net_from_json(fh.read())
        n, d = task.series.shape[1:]
        if net.generator.n != n or net.model.drift.d_out != d:
            raise ConfigError(f"{label} checkpoint expects {net.generator.n} nodes x "
                              f"{net.model.drift.d_out} features, data has {n} x {d}")
        nets[label] = net
    if p.horizon < 0:
        raise ConfigError("predict.horizon must be nonnegative")
    test = task.test
    primer_len = task.window if task.history else 1
    if p.start < 0 or p.start + primer_len + p.horizon > test.shape[0]:
        raise ConfigError(f"test split of {test.shape[0]} steps cannot hold primer {primer_len} "
                          f"+ horizon {p.horizon} from start {p.start}")
    primer = test[p.start:p.start + primer_len]
    truth = test[p.start + primer_len:p.start + primer_len + p.horizon]
    preds = {k: rolling_predict(net, primer, p.horizon) for k, net in nets.items()}
    out = _prepare(cfg, "predict")
    names = FEATURE_NAMES.get(task.name, tuple(f"f{c}" for c in range(test.shape[2])))
    n, d = test.shape[1:]
    t0 = (p.start + primer_len) * task.dt
    for node in range(n):
        header = ["t"]
        for c in range(d):
            header += [f"truth_{names[c]}", f"ggn_pred_{names[c]}", f"sggn_pred_{names[c]}"]
        rows = []
        for k in range(p.horizon):
            row = [float(t0 + k * task.dt)]
            for c in range(d):
                row += [float(truth[k, node, c]), float(preds["ggn"][k, node, c]),
                        float(preds["sggn"][k, node, c])]
            rows.append(row)
        write_rows(os.path.join(out, f"predict_node{node:02d}.csv"), header, rows)
    return 0
