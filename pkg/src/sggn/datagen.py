"""Synthetic data: Kuramoto trajectories, a multi-station channel surrogate,
sliding windows and grouped-convolution features."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import ContractError, SizeError
from .numerics import tensor as T


# -- Kuramoto ----------------------------------------------------------------------
@dataclass
class KuramotoConfig:
    adjacency: np.ndarray
    natural_frequencies: np.ndarray
    theta0: np.ndarray
    coupling: float = 2.0
    h: float = 0.01
    steps: int = 2000

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.natural_frequencies = np.asarray(self.natural_frequencies, dtype=np.float64)
        self.theta0 = np.asarray(self.theta0, dtype=np.float64)
        a = self.adjacency
        n = self.n
        if a.shape != (n, n) or not np.array_equal(a, a.T):
            raise ContractError("adjacency must be a symmetric N x N matrix")
        if not np.all((a == 0) | (a == 1)) or np.any(np.diag(a) != 0):
            raise ContractError("adjacency must be binary with zero diagonal")
        if self.natural_frequencies.shape != (n,) or self.theta0.shape != (n,):
            raise ContractError("frequencies and initial phases must have length N")
        if not self.h > 0:
            raise ContractError("RK4 step must be positive")

    @property
    def n(self):
        return self.theta0.shape[0]


def erdos_renyi(n, p, rng):
    upper = np.triu((rng.random((n, n)) < p).astype(np.float64), k=1)
    return upper + upper.T


def default_kuramoto(seed_rng, n=10, p=0.5, coupling=2.0, h=0.01, steps=2000):
    """Erdos-Renyi graph, frequencies uniform in [-1, 1], phases uniform in [0, 2 pi)."""
    adj = erdos_renyi(n, p, seed_rng)
    omega = seed_rng.uniform(-1.0, 1.0, n)
    theta0 = seed_rng.uniform(0.0, 2.0 * math.pi, n)
    return KuramotoConfig(adj, omega, theta0, coupling, h, steps)


def kuramoto_rhs(theta, cfg: KuramotoConfig):
    """``omega_i + K sum_j A_ij sin(theta_j - theta_i)``."""
    theta = np.asarray(theta, dtype=np.float64)
    diff = theta[None, :] - theta[:, None]
    return cfg.natural_frequencies + cfg.coupling * np.sum(cfg.adjacency * np.sin(diff), axis=1)


def rk4_step(rhs, y, h):
    """Classical four-stage Runge-Kutta step for an autonomous ``rhs``."""
    y = np.asarray(y, dtype=np.float64)
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_kuramoto(cfg: KuramotoConfig):
    """Phases (unwrapped) and instantaneous frequencies, both ``steps x N``.

    Row 0 is the initial state, so ``steps`` rows cover ``steps - 1`` RK4 steps.
    """
    rhs = lambda th: kuramoto_rhs(th, cfg)
    phases = np.zeros((cfg.steps, cfg.n))
    freqs = np.zeros((cfg.steps, cfg.n))
    th = cfg.theta0.copy()
    for k in range(cfg.steps):
        phases[k] = th
        freqs[k] = rhs(th)
        th = rk4_step(rhs, th, cfg.h)
    return phases, freqs


def order_parameter(phases):
    return np.abs(np.mean(np.exp(1j * np.asarray(phases)), axis=-1))


def kuramoto_features(phases, frequencies):
    """Node features ``[sin(theta), dtheta/dt]``, shape ``steps x N x 2``."""
    phases = np.asarray(phases)
    frequencies = np.asarray(frequencies)
    if phases.shape != frequencies.shape:
        raise ContractError("phases and frequencies must share a shape")
    return np.stack([np.sin(phases), frequencies], axis=-1)


# -- windows ------------------------------------------------------------------------
@dataclass
class TrajectoryDataset:
    inputs: np.ndarray   # (count, window_len, N, d)
    targets: np.ndarray  # (count, window_len, N, d)
    dt: float = 1.0
    feature_spec: str = ""
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def windows(self):
        return list(zip(self.inputs, self.targets))


def window_count(steps, window_len, stride):
    return (steps - window_len - 1) // stride + 1


def make_windows(series, window_len, stride=1, dt=1.0, feature_spec=""):
    """Sliding windows with next-step targets: ``target[t] == series[start + t + 1]``."""
    series = np.asarray(series, dtype=np.float64)
    steps = series.shape[0]
    if window_len < 1 or stride < 1:
        raise ContractError("window length and stride must be positive")
    if steps < window_len + 1:
        raise SizeError(f"series of {steps} steps is too short for window {window_len} (+1 target)")
    count = window_count(steps, window_len, stride)
    starts = np.arange(count) * stride
    idx = starts[:, None] + np.arange(window_len)[None, :]
    return TrajectoryDataset(series[idx], series[idx + 1], dt, feature_spec, starts)


def split_series(series, fractions=(0.7, 0.15, 0.15)):
    """Contiguous train/val/test split along time."""
    series = np.asarray(series)
    n = series.shape[0]
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return series[:a], series[a:b], series[b:]


# -- channel surrogate ------------------------------------------------------------
@dataclass
class SurrogateChannelConfig:
    stations: int = 8
    shared_paths: int = 8
    private_paths: int = 4
    max_doppler: float = 2.0
    noise_level: float = 0.3
    spacing: float = 0.024
    length: int = 800

    def __post_init__(self):
        if self.stations < 1:
            raise ContractError("need at least one station")
        if not self.spacing > 0:
            raise ContractError("sample spacing must be positive")
        if self.length < 1:
            raise ContractError("length must be positive")


def synthesize_channel(cfg: SurrogateChannelConfig, rng, return_components=False):
    """Jakes-style sum of complex sinusoids per station plus white Gaussian noise.

    A pool of shared Doppler components is visible to every station with a
    station-specific gain and phase; each station adds its own private
    components. Returns a complex ``length x stations`` array.
    """
    t = np.arange(cfg.length) * cfg.spacing
    n_sh, n_pr = cfg.shared_paths, cfg.private_paths
    shared_f = cfg.max_doppler * np.cos(rng.uniform(0, 2 * math.pi, n_sh))
    series = np.zeros((cfg.length, cfg.stations), dtype=np.complex128)
    freqs = []
    for s in range(cfg.stations):
        gains = rng.uniform(0.5, 1.0, n_sh) / math.sqrt(max(n_sh + n_pr, 1))
        phases = rng.uniform(0, 2 * math.pi, n_sh)
        priv_f = cfg.max_doppler * np.cos(rng.uniform(0, 2 * math.pi, n_pr))
        priv_g = rng.uniform(0.5, 1.0, n_pr) / math.sqrt(max(n_sh + n_pr, 1))
        priv_p = rng.uniform(0, 2 * math.pi, n_pr)
        f_all = np.concatenate([shared_f, priv_f])
        g_all = np.concatenate([gains, priv_g])
        p_all = np.concatenate([phases, priv_p])
        series[:, s] = np.sum(g_all[None, :] * np.exp(1j * (2 * math.pi * f_all[None, :] * t[:, None]
                                                           + p_all[None, :])), axis=1)
        freqs.append(f_all)
    if cfg.noise_level > 0:
        noise = rng.standard_normal((cfg.length, cfg.stations, 2)) * (cfg.noise_level / math.sqrt(2))
        series = series + noise[..., 0] + 1j * noise[..., 1]
    if return_components:
        return series, np.array(freqs)
    return series


@dataclass
class Standardization:
    mean: np.ndarray  # (stations, 2)
    std: np.ndarray   # (stations, 2)

    def apply(self, series):
        return (complex_to_real(series) - self.mean) / self.std

    def invert(self, features):
        feats = np.asarray(features) * self.std + self.mean
        return feats[..., 0] + 1j * feats[..., 1]


def complex_to_real(series):
    series = np.asarray(series)
    return np.stack([series.real, series.imag], axis=-1)


def normalize_complex(series, stats: Optional[Standardization] = None):
    """Split into real/imag channels and standardize each per station.

    Returns ``(features, stats)``; pass ``stats`` to reuse training-set moments.
    """
    series = np.asarray(series)
    if series.size == 0:
        raise ContractError("cannot normalize an empty series")
    real = complex_to_real(series)
    if stats is None:
        mean = real.mean(axis=0)
        std = real.std(axis=0)
        if np.any(std == 0):
            raise ContractError("a channel has zero variance")
        stats = Standardization(mean, std)
    return (real - stats.mean) / stats.std, stats


def denormalize_complex(features, stats: Standardization):
    return stats.invert(features)


# -- grouped convolution ------------------------------------------------------------
def group_conv_features(window, kernels, sub_window=36):
    """Grouped 1-D correlation over non-overlapping sub-windows.

    ``window``: ``(..., L, stations, 2)`` with ``L`` a multiple of ``sub_window``.
    ``kernels``: ``(stations, 2, n_kernels, sub_window)``, one bank per
    station-channel; no mixing across stations or channels.
    Returns ``(..., stations, 2 * n_kernels * L // sub_window)`` ordered
    ``(channel, segment, kernel)``.
    """
    w = T.as_tensor(window)
    k = T.as_tensor(kernels)
    *lead, length, stations, chans = w.shape
    lead = tuple(lead)
    if length % sub_window != 0:
        raise ContractError(f"window length {length} is not a multiple of {sub_window}")
    if k.ndim != 4 or k.shape[0] != stations or k.shape[1] != chans or k.shape[3] != sub_window:
        raise ContractError(f"kernel bank shape {k.shape} does not match window {w.shape}")
    segs = length // sub_window
    # (..., segs, sub, stations, ch) -> (..., stations, ch, segs, sub)
    nd = len(lead)
    x = T.reshape(w, lead + (segs, sub_window, stations, chans))
    x = T.transpose(x, tuple(range(nd)) + (nd + 2, nd + 3, nd, nd + 1))
    kt = T.transpose(k, (0, 1, 3, 2))  # (stations, ch, sub, n_k)
    out = T.matmul(x, kt)  # (..., stations, ch, segs, n_k)
    return T.reshape(out, lead + (stations, chans * segs * k.shape[2]))


def init_kernels(stations, n_kernels, sub_window, rng, channels=2):
    bound = 1.0 / math.sqrt(sub_window)
    return rng.uniform(-bound, bound, (stations, channels, n_kernels, sub_window))


# -- CSV bundles ----------------------------------------------------------------------
def write_tensor_csv(path, array):
    """Header row of dims, then row-major values (one row per leading index)."""
    a = np.asarray(array, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(str(int(s)) for s in a.shape) + "\n")
        rows = a.reshape(a.shape[0], -1) if a.ndim > 1 else a.reshape(-1, 1)
        for row in rows:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def read_tensor_csv(path):
    with open(path) as fh:
        shape = tuple(int(s) for s in fh.readline().strip().split(","))
        vals = [float(v) for line in fh if line.strip() for v in line.strip().split(",")]
    return np.array(vals, dtype=np.float64).reshape(shape)


def write_bundle(directory, tensors, manifest):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in tensors.items():
        fname = f"{name}.csv"
        write_tensor_csv(directory / fname, arr)
        files[name] = {"file": fname, "shape": list(np.shape(arr))}
    doc = dict(manifest)
    doc["tensors"] = files
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return directory / "manifest.json"


def read_bundle(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    tensors = {name: read_tensor_csv(directory / info["file"])
               for name, info in manifest["tensors"].items()}
    return tensors, manifest
