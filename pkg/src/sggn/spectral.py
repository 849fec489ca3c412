"""Hessian eigenvalues of the empirical loss over training, and smoothed spectral densities."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import ContractError
from .io import write_json, write_rows
from .numerics import hessian, hvp, lanczos, make_rng, sym_eigen
from .training import SGGN, deterministic_loss_fn

DENSE_LIMIT = 500
FORCED_EPOCHS = (1, 50, 100)


def capture_spectrum(loss_fn, params, k=20, dense_limit=DENSE_LIMIT, iters=None, seed=0):
    """Ascending Hessian eigenvalues of ``loss_fn`` at ``params``.

    Up to ``dense_limit`` parameters the full symmetrized Hessian is
    diagonalized; above it the ``k`` largest eigenvalues come from Lanczos on
    exact Hessian-vector products.
    """
    x = np.asarray(params, dtype=np.float64)
    if x.size <= dense_limit:
        return sym_eigen(hessian(loss_fn, x))[0]
    matvec = lambda v: hvp(loss_fn, x, v)
    return lanczos(matvec, x.size, k, iters=iters, rng=make_rng(seed, "lanczos"))


def silverman_bandwidth(values):
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    iqr = np.subtract(*np.percentile(v, [75, 25]))
    sd = v.std(ddof=1) if n > 1 else 0.0
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        spread = 0.1 * max(1.0, float(np.max(np.abs(v))))
    return 0.9 * spread * n ** (-0.2)


def default_grid(eigenvalues, bandwidth, points=512):
    lo, hi = float(np.min(eigenvalues)), float(np.max(eigenvalues))
    return np.linspace(lo - 4 * bandwidth, hi + 4 * bandwidth, points)


def spectral_density(eigenvalues, grid=None, bandwidth=None):
    """Gaussian-kernel density on ``grid``, rescaled to unit trapezoid integral.

    Returns ``(grid, density, bandwidth)``.
    """
    ev = np.asarray(eigenvalues, dtype=np.float64).reshape(-1)
    if ev.size == 0:
        raise ContractError("no eigenvalues given")
    h = silverman_bandwidth(ev) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ContractError("bandwidth must be positive")
    grid = default_grid(ev, h) if grid is None else np.asarray(grid, dtype=np.float64)
    z = (grid[:, None] - ev[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1)
    area = np.trapezoid(dens, grid)
    if not area > 0:
        raise ContractError("grid does not cover the eigenvalues")
    return grid, dens / area, h


def capture_schedule(epochs, every=10, forced=FORCED_EPOCHS):
    """Epochs ``0, every, 2 every, ...`` plus the forced ones that fall inside the run."""
    if every <= 0:
        raise ContractError("every must be positive")
    sched = set(range(0, epochs + 1, every)) | {e for e in forced if e <= epochs}
    return sorted(sched)


@dataclass
class SpectralReport:
    model: str
    epochs: List[int] = field(default_factory=list)
    eigenvalues: List[np.ndarray] = field(default_factory=list)
    densities: List[tuple] = field(default_factory=list)
    bandwidths: List[float] = field(default_factory=list)

    @property
    def top_eigenvalue(self):
        return [float(ev[-1]) for ev in self.eigenvalues]

    def add(self, epoch, eigenvalues, bandwidth=None):
        ev = np.sort(np.asarray(eigenvalues, dtype=np.float64))
        grid, dens, h = spectral_density(ev, bandwidth=bandwidth)
        self.epochs.append(int(epoch))
        self.eigenvalues.append(ev)
        self.densities.append((grid, dens))
        self.bandwidths.append(h)

    def summary(self):
        return {"model": self.model, "epochs": self.epochs, "top_eigenvalue": self.top_eigenvalue,
                "bandwidth": self.bandwidths}

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        tag = self.model.lower().replace("-", "")
        rows = [[e, i, float(v)] for e, ev in zip(self.epochs, self.eigenvalues)
                for i, v in enumerate(ev)]
        write_rows(os.path.join(directory, f"spectrum_{tag}.csv"),
                   ("capture_epoch", "eigenvalue_index", "value"), rows)
        for e, (grid, dens) in zip(self.epochs, self.densities):
            write_rows(os.path.join(directory, f"density_{tag}_epoch{e:04d}.csv"), ("grid", "density"),
                       [[float(g), float(d)] for g, d in zip(grid, dens)])


def write_spectral_summary(path, reports: Dict[str, SpectralReport]):
    write_json(path, {name: rep.summary() for name, rep in reports.items()})


class SpectrumTracker:
    """Training hook capturing the noise-off loss Hessian on a fixed evaluation set."""

    def __init__(self, model, inputs, targets, epochs, every=10, k=20, dense_limit=DENSE_LIMIT,
                 schedule=None, seed=0):
        self.inputs, self.targets = inputs, targets
        self.schedule = set(capture_schedule(epochs, every) if schedule is None else schedule)
        self.k, self.dense_limit, self.seed = k, dense_limit, seed
        self.report = SpectralReport(model)

    def __call__(self, epoch, net: SGGN):
        if epoch not in self.schedule:
            return
        fn = deterministic_loss_fn(net, self.inputs, self.targets, hard=True)
        ev = capture_spectrum(fn, net.dynamics_vector(), self.k, self.dense_limit, seed=self.seed)
        self.report.add(epoch, ev)


def track_spectra(train: Callable, model, inputs, targets, epochs, every=10, **kwargs):
    """Run ``train(hook)`` with a spectrum tracker attached; returns ``(result, report)``."""
    tracker = SpectrumTracker(model, inputs, targets, epochs, every, **kwargs)
    result = train(tracker)
    return result, tracker.report
