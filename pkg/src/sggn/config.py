"""Experiment configuration: INI sections per module, typed fields, strict key checking."""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields, replace
from typing import Tuple

from .errors import ContractError

OUTPUT_ENV = "SGGN_OUTPUT_ROOT"


class ConfigError(ContractError):
    """The configuration is malformed or names unknown keys."""


@dataclass(frozen=True)
class DataSection:
    task: str = "kuramoto"
    nodes: int = 10
    edge_prob: float = 0.5
    coupling: float = 2.0
    h: float = 0.01
    steps: int = 2000
    subsample: int = 10
    window: int = 0  # 0 selects the task default (20 for kuramoto, 72 for channel)
    stations: int = 8
    length: int = 800
    noise_level: float = 0.3
    max_doppler: float = 2.0
    spacing: float = 0.024


@dataclass(frozen=True)
class TrainSection:
    dataset: str = ""
    mode: str = "S-GGN"
    epochs: int = 100
    generator_steps: int = 3
    dynamics_steps: int = 7
    lr_generator: float = 1e-2
    lr_dynamics: float = 1e-3
    eps_scale: float = 0.1
    batch_size: int = 8
    hidden: int = 16
    activation: str = "relu"
    tau: float = 1.0
    anneal_tau: bool = False
    noise_samples: int = 1
    divergence_factor: float = 1e6
    n_kernels: int = 4
    sub_window: int = 36
    horizon: int = 10
    mc_draws: int = 0
    spectra: bool = False


@dataclass(frozen=True)
class TheorySection:
    system: str = "pure-noise"
    eps_ladder: Tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    pairs: int = 100000
    hessian_point: str = "penultimate"
    control_variate: bool = True
    tol: float = 0.3
    delta_ladder: Tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125, 0.00625)
    delta_steps: int = 4
    delta_tol: float = 0.1
    delta_form: str = "single"


@dataclass(frozen=True)
class SpectralSection:
    every: int = 10
    k: int = 20
    dense_limit: int = 500
    windows: int = 32


@dataclass(frozen=True)
class PredictSection:
    ggn_checkpoint: str = ""
    sggn_checkpoint: str = ""
    horizon: int = 50
    start: int = 0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output: str = ""


SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "train": TrainSection,
    "theory": TheorySection,
    "spectral": SpectralSection,
    "predict": PredictSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    theory: TheorySection = field(default_factory=TheorySection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    predict: PredictSection = field(default_factory=PredictSection)

    @property
    def seed(self):
        return self.run.seed

    def output_dir(self, command):
        if self.run.output:
            return self.run.output
        return os.path.join(os.environ.get(OUTPUT_ENV, "sggn_out"), command)

    def with_updates(self, updates):
        """Apply ``{"section.key": "text"}`` overrides, parsing each value by field type."""
        cfg = self
        for dotted, text in updates.items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            sec, key = dotted.split(".", 1)
            cfg = cfg._set(sec, key, text)
        return cfg

    def _set(self, sec, key, text):
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        section = getattr(self, sec)
        types = {f.name: f.type for f in fields(section)}
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in section [{sec}]")
        value = _parse(types[key], text, f"{sec}.{key}")
        return replace(self, **{sec: replace(section, **{key: value})})

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        for sec in SECTIONS:
            section = getattr(self, sec)
            cp[sec] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _parse(kind, text, where):
    text = str(text).strip()
    try:
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in ("str", str):
            return text
        if "Tuple" in str(kind):
            return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {kind}") from None
    raise ConfigError(f"{where}: unsupported field type {kind}")


def _format(value):
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, base=None):
    """Parse INI text on top of ``base`` (defaults when omitted); unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = base or ExperimentConfig()
    for sec in cp.sections():
        for key, val in cp[sec].items():
            cfg = cfg._set(sec, key, val)
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
