"""Command-line entry point: ``sggn {simulate,train,verify,predict,spectra}``.

Every command resolves one ``ExperimentConfig`` (defaults, then the config
file, then ``--set section.key=value`` and the shorthand flags), writes it as
``config.ini`` next to its artifacts and exits with

0 success, 2 invalid config or input, 3 file-system failure, 4 divergence,
5 certified verification failure, 6 inconclusive verification.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
COMMANDS = ("simulate", "train", "verify", "predict", "spectra")


def build_parser():
    p = argparse.ArgumentParser(prog="sggn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI file with [run], [data], [train], [theory], [spectral], [predict]")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable; wins over the file)")
    p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
    p.add_argument("--output", help="output directory (default $SGGN_OUTPUT_ROOT/<command>)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    updates = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, val = item.split("=", 1)
        updates[key.strip()] = val
    if args.seed is not None:
        updates["run.seed"] = str(args.seed)
    if args.output is not None:
        updates["run.output"] = args.output
    return cfg.with_updates(updates)


def _limit_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        _limit_threads(args.threads)
    from . import commands
    from .errors import ContractError, DivergenceError, NumericError
    try:
        cfg = resolve_config(args)
        return getattr(commands, f"cmd_{args.command}")(cfg)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NumericError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
