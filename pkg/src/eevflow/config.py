"""Flat key=value experiment configuration.

The format is plain text, one `key = value` per line, `#` comments; no
nesting.  A run's metadata file echoes the fully resolved configuration in
the same format, so any run can be reproduced from its metadata alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    """Unknown key or unparsable value in an experiment configuration."""


EXPERIMENTS = ("converge_space", "converge_time", "step_channel", "cavity_scm", "grid_dump", "timing_compare")


@dataclass
class ExperimentConfig:
    experiment: str = "converge_space"
    scheme: str = "BE_EEV"
    # physical / stochastic data
    e_nu: float = 1e-3  # expected viscosity (manufactured, channel)
    e_re: float = 2e6  # expected Reynolds number (cavity KL viscosity)
    epsilon: float = 1e-3
    gamma: float = 2.99e7
    mu: float = 1.0
    dt: float = 0.000125
    T: float = 0.001
    J: int = 20
    seed: int = 2024
    k_mode: str = "deterministic"  # or "uniform"
    # discretization
    mesh_n: int = 32  # unit square / cavity cells per side
    base: int = 2  # step channel cells per unit length
    mesh_levels: str = "2,4,8,16"  # spatial study
    dt_divisors: str = "4,8,16,32,64"  # temporal study
    bootstrap: str = "exact"  # BDF-2 second level: "exact" or "be"
    # stochastic collocation
    kl_dim: int = 5
    kl_level: int = 1
    kl_length: float = 0.01
    # experiment switches
    seminorm: bool = False
    negate_inflow: bool = False
    gamma_sweep: str = ""  # e.g. "1,10,100,1000" for the step channel
    vtk_times: str = ""  # comma-separated snapshot times
    diagnostics: bool = False  # per-step CSV stream (includes wall times)
    timing_steps: int = 2
    outdir: str = "out"


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELDS[key].type
    raw = raw.strip()
    try:
        if ftype == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for key {key!r}: {raw!r}") from e


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        apply_override(cfg, key, raw)
    return cfg


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def apply_override(cfg: ExperimentConfig, key: str, raw: str) -> None:
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    setattr(cfg, key, _coerce(key, raw))
    if key == "experiment" and cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; expected one of {EXPERIMENTS}")


def config_text(cfg: ExperimentConfig, header: str = "") -> str:
    lines = [f"# {header}"] if header else []
    for f in dataclasses.fields(ExperimentConfig):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def int_list(raw: str) -> list[int]:
    return [int(s) for s in raw.split(",") if s.strip()]


def float_list(raw: str) -> list[float]:
    return [float(s) for s in raw.split(",") if s.strip()]
