"""Run configuration files (JSON or TOML) with strict key checking."""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

from simbi.distributions import Distribution, GaussianDiag, from_dict
from simbi.inference import EstimatorConfig, InferenceMethod
from simbi.neural import TrainConfig
from simbi.samplers import McmcConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    pass


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


SECTIONS = {
    "seed": None,
    "prior": {"kind", "dim", "params"},
    "simulator": {"name", "sigma", "shift", "failure_rate"},
    "method": {"kind", "sampler_strategy"} | (_fields(EstimatorConfig) - {"kind"}) | {"estimator"},
    "train": _fields(TrainConfig) - {"seed"},
    "sampler": (_fields(McmcConfig)) | {"strategy", "n"},
    "diagnostics": {
        "n_trials",
        "n_posterior_samples",
        "n_cases",
        "n_coverage_samples",
        "sbc_alpha",
        "coverage_max_deviation",
        "c2st_max_accuracy",
        "c2st_folds",
    },
}

DIAGNOSTIC_DEFAULTS = {
    "n_trials": 200,
    "n_posterior_samples": 100,
    "n_cases": 500,
    "n_coverage_samples": 500,
    "sbc_alpha": 0.01,
    "coverage_max_deviation": 0.05,
    "c2st_max_accuracy": 0.6,
    "c2st_folds": 5,
}


def validate(cfg: dict) -> dict:
    """Reject unknown sections/keys and a missing seed; returns ``cfg`` unchanged."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}; allowed: {sorted(SECTIONS)}")
    if "seed" not in cfg:
        raise ConfigError("config must set 'seed'")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("'seed' must be an integer")
    for name, allowed in SECTIONS.items():
        if allowed is None or name not in cfg:
            continue
        section = cfg[name]
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table/object")
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) {sorted(bad)} in [{name}]; allowed: {sorted(allowed)}")
    return cfg


def load_config(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        cfg = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as err:
        raise ConfigError(f"{path}: cannot parse config ({err})") from err
    return validate(cfg)


def prior_from(cfg: dict) -> Distribution:
    if "prior" not in cfg:
        return GaussianDiag([0.0, 0.0], [1.0, 1.0])
    try:
        return from_dict(cfg["prior"])
    except ValueError as err:
        raise ConfigError(f"[prior]: {err}") from err


def method_from(cfg: dict, train_seed: int) -> InferenceMethod:
    sec = dict(cfg.get("method", {}))
    kind = sec.pop("kind", "NPE")
    sec.pop("sampler_strategy", None)
    est = dict(sec.pop("estimator", {}))
    est.update(sec)
    if kind.upper() == "NRE":
        est["kind"] = "ratio-classifier"
    try:
        train = TrainConfig(**{**cfg.get("train", {}), "seed": train_seed})
        return InferenceMethod(kind, prior_from(cfg), EstimatorConfig(**est), train)
    except TypeError as err:
        raise ConfigError(f"[method]/[train]: {err}") from err


def mcmc_from(cfg: dict) -> McmcConfig:
    sec = {k: v for k, v in cfg.get("sampler", {}).items() if k not in ("strategy", "n")}
    return McmcConfig(**sec)


def strategy_from(cfg: dict) -> str | None:
    return cfg.get("sampler", {}).get("strategy") or cfg.get("method", {}).get("sampler_strategy")


def diagnostics_from(cfg: dict) -> dict:
    return {**DIAGNOSTIC_DEFAULTS, **cfg.get("diagnostics", {})}
