"""Run configuration: one JSON document drives every pipeline stage.

Unknown keys are rejected anywhere in the tree. The effective config (user
values merged over defaults) is hashed, and the hash is stamped into every
artifact the pipeline writes.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ConfigError

MODELS = ("transformer", "auto-tab", "auto-ubs")

DEFAULTS: dict = {
    "seed": 42,
    "models": list(MODELS),
    "paths": {
        # null means "derived from the output directory": <out>/synth
        "logs_dir": None,
        "labels": None,
    },
    "synth": {
        "n_benign": 100,
        "n_malicious": 10,
        "n_days": None,  # null = ubs.days
        "http_rate": 12.0,
        "email_rate": 3.0,
        "file_rate": 1.2,
        "device_prob": 0.25,
        "min_anomalous_sessions": 3,
        "max_anomalous_sessions": 6,
    },
    "ingest": {
        "window_start": "2010-01-04",
        "internal_domain": "dtaa.com",
        "url_categories_path": None,
        "malformed_tolerance": 0.01,
    },
    "ubs": {
        "days": 60,
        "sessions": 9,
        "features": 35,
    },
    "split": {
        "train_benign": 70,
    },
    "transformer": {
        "d_model": 16,
        "n_blocks": 2,
        "n_heads": 2,
        "d_ff": 64,
        "dropout": 0.1,
        "learning_rate": 1e-3,
        "epochs": 6,
        "early_stop_patience": 5,
        "early_stop_min_delta": 1e-6,
    },
    "auto_tab": {
        "hidden": [64, 16],
        "dropout": 0.0,
        "learning_rate": 1e-3,
        "epochs": 30,
        "early_stop_patience": 5,
        "early_stop_min_delta": 1e-6,
    },
    "auto_ubs": {
        # wide-input model: small net + dropout keeps it from memorizing the
        # training users, which would starve the detectors of error spread
        "hidden": [32, 8],
        "dropout": 0.1,
        "learning_rate": 1e-3,
        "epochs": 10,
        "early_stop_patience": 5,
        "early_stop_min_delta": 1e-6,
    },
    "detectors": {
        "nu": 0.1,
        "gamma": None,
        "lof_k": 20,
        "lof_threshold": 1.5,
        "n_trees": 100,
        "subsample": 256,
        "iforest_threshold": 0.55,
        "summary_mode": "stats4",
    },
}


def _merge(defaults: dict, user: dict, crumb: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {crumb}{key!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {crumb}{key!r} must be an object")
            out[key] = _merge(defaults[key], value, f"{crumb}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, seed_override: int | None = None) -> dict:
    """Defaults merged with the JSON file at `path`; unknown keys rejected."""
    user: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    cfg = _merge(DEFAULTS, user, "")
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for model in cfg["models"]:
        if model not in MODELS:
            raise ConfigError(f"unknown model {model!r}, expected one of {MODELS}")
    if cfg["detectors"]["summary_mode"] not in ("stats4", "mean"):
        raise ConfigError("detectors.summary_mode must be 'stats4' or 'mean'")
    if cfg["split"]["train_benign"] < 1:
        raise ConfigError("split.train_benign must be at least 1")
    ubs = cfg["ubs"]
    if min(ubs["days"], ubs["sessions"], ubs["features"]) <= 0:
        raise ConfigError("ubs dimensions must be positive")


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
