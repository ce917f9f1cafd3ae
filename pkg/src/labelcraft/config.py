"""Experiment configuration: defaults, TOML loading, overrides, hashing."""
from __future__ import annotations

import copy
import hashlib
import json

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - environment dependent
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "default_config",
    "load_config",
    "merge_config",
    "apply_variant",
    "config_hash",
    "ABLATION_VARIANTS",
]

# variant -> (section, key, value) applied on top of the base config
ABLATION_VARIANTS = {
    "no_s": ("objective", "scale_mode", "minmax"),  # plain min-max feedback scaling
    "no_b": ("objective", "dynamic_balance", False),  # equal weights
    "no_wi": ("labeling", "use_watch", False),  # drop watch time from g inputs
    "no_di": ("labeling", "use_duration", False),  # drop duration from g inputs
    "no_ei": ("labeling", "use_explicit", False),  # drop explicit flags from g inputs
    "no_wo": ("objective", "use_m1", False),  # drop the watch-time sub-objective
    "no_do": ("objective", "use_m3", False),  # drop the diversity sub-objective
    "no_eo": ("objective", "use_m2", False),  # drop the explicit-feedback sub-objective
}


class ConfigError(ValueError):
    """Invalid or unusable experiment configuration (exit code 2)."""


_DEFAULTS = {
    "data": {
        "source": "synthetic",  # or "csv" with path = "..."
        "path": "",
        "n_users": 2000,
        "n_items": 1000,
        "n_days": 14,
        "latent_dim": 8,
        "duration_bias_strength": 0.6,
        "explicit_rate": 0.15,
        "events_per_user_per_day": 5,
        "seed": -1,  # -1: derive from the run seed
    },
    "split": {"train_days": 12, "val_days": 1, "test_days": 1},
    "encoder": {"user_hash_size": 4096, "item_hash_size": 2048, "history_length": 0},
    "model": {
        "embed_dim": 8,
        "recommender_hidden": [32],
        "labeling_hidden": [32, 32],
    },
    "train": {
        "eta1": 0.1,
        "eta2": 1.0,
        "weight_decay": 0.0,
        "phi_weight_decay": 0.0,
        "batch_size": 256,
        "meta_users_per_step": 64,
        "max_epochs": 30,
        "patience": 5,
        "fresh_theta_batch": False,
    },
    "objective": {
        "k": 10,
        "tau": 0.5,
        "beta": 80.0,
        "scale_mode": "piecewise",
        "m3_exponent": 0.5,
        "epsilon": 0.0,  # 0: adaptive (0.1 on the standardized score scale)
        "max_iters": 200,
        "tol": 1e-6,
        "dynamic_balance": True,
        "use_m1": True,
        "use_m2": True,
        "use_m3": True,
    },
    "labeling": {"use_watch": True, "use_duration": True, "use_explicit": True},
    "baselines": {"n_buckets": 10, "wt_raw": False},
    "eval": {"k": 10, "histogram_bins": 10},
}


def default_config() -> dict:
    return copy.deepcopy(_DEFAULTS)


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path:
        try:
            with open(path, "rb") as fh:
                user_cfg = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        unknown = set(user_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
        cfg = merge_config(cfg, user_cfg)
    return cfg


def apply_variant(cfg: dict, variant: str | None) -> dict:
    if not variant:
        return cfg
    key = variant.lower().replace("w/o ", "no_").replace(" ", "")
    if key not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; expected one of {sorted(ABLATION_VARIANTS)}")
    section, field, value = ABLATION_VARIANTS[key]
    out = copy.deepcopy(cfg)
    out[section][field] = value
    return out


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
