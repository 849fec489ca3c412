"""End-to-end task pipelines: data preparation, training and held-out evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import datagen
from .datagen import SurrogateChannelConfig, Standardization, make_windows, split_series
from .errors import ContractError, SizeError
from .numerics import make_rng
from .training import SGGN, TrainConfig, evaluate, train_alternating

TASKS = ("kuramoto", "channel")


@dataclass
class TaskData:
    """A multivariate series ``(steps, N, d)`` split along time, plus its windowing."""

    name: str
    series: np.ndarray
    dt: float
    window: int
    history: bool
    fractions: tuple = (0.7, 0.15, 0.15)
    adjacency: Optional[np.ndarray] = None
    stats: Optional[Standardization] = None
    meta: dict = field(default_factory=dict)

    def splits(self):
        return split_series(self.series, self.fractions)

    def datasets(self, stride=1):
        tr, va, _ = self.splits()
        return (make_windows(tr, self.window, stride, self.dt, self.name),
                make_windows(va, self.window, stride, self.dt, self.name))

    @property
    def test(self):
        return self.splits()[2]


def kuramoto_task(seed, nodes=10, edge_prob=0.5, coupling=2.0, h=0.01, steps=2000, subsample=10,
                  window=20):
    """Kuramoto features ``[sin theta, dtheta/dt]`` sampled every ``subsample`` RK4 steps."""
    if subsample < 1:
        raise ContractError("subsample must be positive")
    cfg = datagen.default_kuramoto(make_rng(seed, "kuramoto"), nodes, edge_prob, coupling, h, steps)
    phases, freqs = datagen.simulate_kuramoto(cfg)
    series = datagen.kuramoto_features(phases, freqs)[::subsample]
    _check_length(series.shape[0], window)
    return TaskData("kuramoto", series, h * subsample, window, False, adjacency=cfg.adjacency,
                    meta={"natural_frequencies": cfg.natural_frequencies.tolist()})


def channel_task(seed, stations=8, length=800, noise_level=0.3, max_doppler=2.0, spacing=0.024,
                 window=72):
    """Surrogate multi-station channel standardized per station and real/imag part.

    Moments come from the training split only.
    """
    cfg = SurrogateChannelConfig(stations=stations, max_doppler=max_doppler,
                                 noise_level=noise_level, spacing=spacing, length=length)
    raw = datagen.synthesize_channel(cfg, make_rng(seed, "channel"))
    n_train = int(round(0.7 * length))
    _, stats = datagen.normalize_complex(raw[:n_train])
    series, _ = datagen.normalize_complex(raw, stats)
    _check_length(series.shape[0], window)
    return TaskData("channel", series, spacing, window, True, stats=stats)


def _check_length(steps, window):
    need = int(np.ceil((window + 1) / 0.15))
    if steps < need:
        raise SizeError(f"{steps} samples cannot hold a window of {window} (+1 target) in every "
                        f"split; at least {need} are needed")


def make_task(name, seed, **kwargs):
    if name == "kuramoto":
        return kuramoto_task(seed, **kwargs)
    if name == "channel":
        return channel_task(seed, **kwargs)
    raise ContractError(f"unknown task {name!r}; choose from {TASKS}")


def task_tensors(task: TaskData):
    out = {"series": task.series}
    if task.adjacency is not None:
        out["adjacency"] = task.adjacency
    if task.stats is not None:
        out["stats_mean"] = task.stats.mean
        out["stats_std"] = task.stats.std
    return out


def task_manifest(task: TaskData):
    return {"task": task.name, "dt": task.dt, "window": task.window, "history": task.history,
            "fractions": list(task.fractions), "meta": task.meta}


def task_from_bundle(tensors, manifest):
    stats = None
    if "stats_mean" in tensors:
        stats = Standardization(tensors["stats_mean"], tensors["stats_std"])
    return TaskData(manifest["task"], tensors["series"], float(manifest["dt"]), int(manifest["window"]),
                    bool(manifest["history"]), tuple(manifest["fractions"]),
                    tensors.get("adjacency"), stats, manifest.get("meta", {}))


def train_on_task(task: TaskData, cfg: TrainConfig, hook=None, stride=1):
    """Train one model on the task's training windows; validation on its validation split."""
    if task.history and task.window < 2 * cfg.sub_window:
        raise ContractError(f"history window {task.window} is shorter than two sub-windows of "
                            f"{cfg.sub_window}")
    ds, vds = task.datasets(stride)
    return train_alternating(ds, cfg, val=vds, hook=hook, history_window=task.history)


def evaluate_on_task(net: SGGN, task: TaskData, horizon, mode, stride=None, mc_draws=0,
                     eps_scale=0.1, seed=0):
    """Rolling-forecast metrics on the test split, primed with ``task.window`` states."""
    primer = task.window if task.history else 1
    return evaluate(net, task.test, primer, horizon, mode, stride, mc_draws, eps_scale, seed=seed)
