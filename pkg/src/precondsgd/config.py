"""Experiment configuration files.

Flat INI-style configs with [problem], [optimizer], [run] and an optional
[sweep] section. Every key is typed against a per-section schema and
unknown keys are errors, not warnings: a silently misspelled key would
corrupt a sweep.
"""

from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass, field

from .errors import ConfigError

PROBLEM_NAMES = ("saddle", "counterexample", "quadratic_gaussian", "logistic_synthetic", "logistic_csv")
ALGORITHMS = ("sgd", "preconditioned_sgd", "rmsprop", "rmsprop_burnin", "large_step")
KINDS = ("identity", "full_matrix", "diagonal", "covariance_full_matrix")
SOURCES = ("idealized", "estimated")
ETA_DECAYS = ("none", "inv_sqrt")
AUTO_MODES = ("first_order_exact", "first_order_inexact", "second_order")


def _parse_float(s):
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {s!r}") from exc


def _parse_int(s):
    try:
        return int(s)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {s!r}") from exc


def _parse_bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_str(s):
    return s.strip()


def _parse_float_list(s):
    items = [v.strip() for v in s.split(",") if v.strip()]
    if not items:
        raise ConfigError("expected a comma-separated list of numbers")
    return [_parse_float(v) for v in items]


def _parse_int_list(s):
    items = [v.strip() for v in s.split(",") if v.strip()]
    if not items:
        raise ConfigError("expected a comma-separated list of integers")
    return [_parse_int(v) for v in items]


def parse_beta_spec(s):
    """'0.99' -> ('fixed', 0.99); 'schedule' / 'schedule:C' -> ('schedule', C)."""
    s = s.strip()
    if s.startswith("schedule"):
        _, _, rest = s.partition(":")
        c = _parse_float(rest) if rest else 1.0
        if c <= 0.0:
            raise ConfigError("beta schedule constant must be positive")
        return ("schedule", c)
    v = _parse_float(s)
    if not 0.0 <= v < 1.0:
        raise ConfigError(f"fixed beta must be in [0, 1), got {v}")
    return ("fixed", v)


_SCHEMAS = {
    "problem": {
        "name": _parse_str,
        "c": _parse_float,
        "zeta": _parse_float,
        "dim": _parse_int,
        "h_diag": _parse_float_list,
        "noise_diag": _parse_float_list,
        "x0": _parse_float_list,
        "n": _parse_int,
        "d": _parse_int,
        "data_seed": _parse_int,
        "label_noise": _parse_float,
        "batch": _parse_int,
        "path": _parse_str,
    },
    "optimizer": {
        "algorithm": _parse_str,
        "kind": _parse_str,
        "source": _parse_str,
        "eta": _parse_float,
        "eta_decay": _parse_str,
        "beta_spec": parse_beta_spec,
        "epsilon": _parse_float,
        "exponent": _parse_float,
        "r": _parse_float,
        "t_thresh": _parse_int,
        "w": _parse_int,
        "s": _parse_int,
        "bias_corrected": _parse_bool,
        "auto": _parse_str,
        "l": _parse_float,
        "rho": _parse_float,
        "c3": _parse_float,
        "c4": _parse_float,
        "nu1": _parse_float,
        "nu2": _parse_float,
        "lambda_minus": _parse_float,
        "m_bound": _parse_float,
        "delta_f": _parse_float,
        "tau": _parse_float,
        "delta": _parse_float,
        "omega": _parse_float,
        "k_const": _parse_float,
    },
    "run": {
        "seeds": _parse_int_list,
        "t": _parse_int,
        "log_every": _parse_int,
        "track_est_error": _parse_bool,
        "lambda_min_every": _parse_int,
        "escape_level": _parse_float,
        "f_threshold": _parse_float,
        "etas": _parse_float_list,
        "est_window_factor": _parse_float,
        "beta_c": _parse_float,
        "burn_in_c": _parse_float,
    },
    "sweep": {
        "axis": _parse_str,
        "values": _parse_str,
    },
}

_REQUIRED = {"problem": ("name",), "optimizer": ("algorithm",), "run": ("seeds", "t")}


@dataclass
class ExperimentConfig:
    """Parsed, validated experiment configuration."""

    problem: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    def clone(self) -> "ExperimentConfig":
        return ExperimentConfig(
            problem=copy.deepcopy(self.problem),
            optimizer=copy.deepcopy(self.optimizer),
            run=copy.deepcopy(self.run),
            sweep=copy.deepcopy(self.sweep),
        )

    def set_axis_value(self, axis: str, raw_value: str) -> None:
        section, key, parser = resolve_axis(axis)
        getattr(self, section)[key] = parser(raw_value)


def resolve_axis(axis: str):
    """Validate a sweep axis 'section.key' and return its parser."""
    section, _, key = axis.partition(".")
    if section not in _SCHEMAS or not key:
        raise ConfigError(f"sweep axis must be 'section.key', got {axis!r}")
    schema = _SCHEMAS[section]
    if key not in schema:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    return section, key, schema[key]


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        read = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise ConfigError(f"{path}: file not found or unreadable")

    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SCHEMAS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = _SCHEMAS[section]
        out = getattr(cfg, section)
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            try:
                out[key] = schema[key](raw)
            except ConfigError as exc:
                raise ConfigError(f"{path}: {section}.{key}: {exc}") from exc
    for section, keys in _REQUIRED.items():
        for key in keys:
            if key not in getattr(cfg, section):
                raise ConfigError(f"{path}: missing required key {section}.{key}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    name = cfg.problem.get("name")
    if name not in PROBLEM_NAMES:
        raise ConfigError(f"problem.name: unknown problem {name!r} (expected one of {PROBLEM_NAMES})")
    algo = cfg.optimizer.get("algorithm")
    if algo not in ALGORITHMS:
        raise ConfigError(f"optimizer.algorithm: unknown algorithm {algo!r}")
    kind = cfg.optimizer.get("kind", "full_matrix")
    if kind not in KINDS:
        raise ConfigError(f"optimizer.kind: unknown kind {kind!r}")
    source = cfg.optimizer.get("source", "estimated")
    if source not in SOURCES:
        raise ConfigError(f"optimizer.source: unknown source {source!r}")
    decay = cfg.optimizer.get("eta_decay", "none")
    if decay not in ETA_DECAYS:
        raise ConfigError(f"optimizer.eta_decay: unknown schedule {decay!r}")
    auto = cfg.optimizer.get("auto")
    if auto is not None and auto not in AUTO_MODES:
        raise ConfigError(f"optimizer.auto: unknown mode {auto!r}")
    if not cfg.run.get("seeds"):
        raise ConfigError("run.seeds: must be non-empty")
    if cfg.run.get("t", 1) < 1:
        raise ConfigError("run.t: must be >= 1")

    if name == "counterexample":
        for key in ("c", "zeta"):
            if key not in cfg.problem:
                raise ConfigError(f"problem.{key}: required for the counterexample problem")
    if name == "quadratic_gaussian":
        for key in ("dim", "h_diag", "noise_diag"):
            if key not in cfg.problem:
                raise ConfigError(f"problem.{key}: required for quadratic_gaussian")
    if name == "logistic_synthetic":
        for key in ("n", "d", "data_seed"):
            if key not in cfg.problem:
                raise ConfigError(f"problem.{key}: required for logistic_synthetic")
    if name == "logistic_csv" and "path" not in cfg.problem:
        raise ConfigError("problem.path: required for logistic_csv")
