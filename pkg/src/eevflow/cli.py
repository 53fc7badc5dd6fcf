"""Command-line entry point.

Verbs map one-to-one onto the experiments:

    eevflow converge-space  --config configs/converge_space_be.cfg
    eevflow converge-time   --config ... --set scheme=BDF2_EEV
    eevflow step-channel    --set gamma_sweep=1,10,100,1000
    eevflow cavity-scm
    eevflow grid-dump       --set kl_dim=5 --set kl_level=1
    eevflow timing-compare

`--set key=value` overrides individual configuration keys after the file is
read.  The environment variable ENSEMBLE_EEV_THREADS caps the worker
concurrency of the per-realization inner loops.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ExperimentConfig, apply_override, load_config
from .experiments import run_experiment

VERBS = {
    "converge-space": "converge_space",
    "converge-time": "converge_time",
    "step-channel": "step_channel",
    "cavity-scm": "cavity_scm",
    "grid-dump": "grid_dump",
    "timing-compare": "timing_compare",
}

# Sensible desk-scale defaults when no config file is given.
VERB_DEFAULTS = {
    "converge_space": {"gamma": "2.99e7", "dt": "0.000125", "T": "0.001"},
    "converge_time": {"gamma": "1e5", "dt": "0.25", "T": "1.0", "mesh_n": "32"},
    "step_channel": {"gamma": "10", "dt": "1.0", "T": "40", "e_nu": "1e-4", "k_mode": "uniform", "base": "2"},
    "cavity_scm": {"gamma": "1000", "dt": "0.5", "T": "20", "epsilon": "0.01", "mesh_n": "16",
                   "k_mode": "uniform", "scheme": "BDF2_EEV", "bootstrap": "be"},
    "grid_dump": {},
    "timing_compare": {"gamma": "10", "dt": "0.08", "T": "0.16", "e_nu": "1e-4", "k_mode": "uniform", "base": "2"},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eevflow", description="Ensemble eddy-viscosity flow experiments")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, help=f"run the {VERBS[verb]} experiment")
        p.add_argument("--config", default=None, help="flat key=value configuration file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one configuration key (repeatable)",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = VERBS[args.verb]
    try:
        cfg = ExperimentConfig(experiment=experiment)
        for key, raw in VERB_DEFAULTS[experiment].items():
            apply_override(cfg, key, raw)
        if args.config is not None:
            cfg = load_config(args.config, base=cfg)
        cfg.experiment = experiment
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, raw = item.split("=", 1)
            apply_override(cfg, key.strip(), raw)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2

    try:
        run_experiment(cfg)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except RuntimeError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 1
    print(f"wrote artifacts to {cfg.outdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
