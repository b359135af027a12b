"""Run configuration: nested YAML merged over defaults, unknown keys rejected.

Every key has a default below.  A user file may set any subset; ``--set
section.key=value`` overrides are applied last (values parsed as YAML
scalars).  The fully resolved document is written next to each run's outputs.
"""

import copy
import os
from pathlib import Path

import yaml

SEED_ENV = "BAYESLM_SEED"

DEFAULTS = {
    "seed": 0,
    "output_dir": "bayeslm-out",
    "data": {
        "train": None,
        "dev": None,
        "test": None,
        "vocab": None,
        "min_count": 1,
        "batch_size": 32,
        "ngram_order": 3,
        "synthetic": {"train": 500, "dev": 100, "test": 100, "seed": 0},
    },
    "model": {
        "kind": "lstm",
        "num_layers": 2,
        "embed_dim": 64,
        "hidden_dim": 128,
        "model_dim": 64,
        "ffn_dim": 256,
        "dropout": 0.2,
        "init_range": 0.1,
    },
    "train": {
        "lr": 0.05,
        "epochs": 30,
        "clip_norm": None,
        "halving_patience": 1,
        "lr_floor": 1.0e-4,
        "regularizer": "none",
        "reg_strength": 0.0,
        "map_reference": None,
        "shuffle": True,
        "keep_best": True,
    },
    "bayes": {
        "variant": "none",
        "positions": [],
        "init_from": None,
        "prior_sigma": None,
        "lambda_prior_sigma": 1.0,
        "init_ratio": 0.05,
        "num_samples": 1,
        "kl_scale": None,
        "latent_kl_scale": 1.0,
        "latent_spread": 1.0,
        "lr": 0.01,
        "clip_norm": 20.0,
    },
    "nas": {
        "variant": "bayes",
        "locations": None,
        "init_from": None,
        "epochs": 5,
        "lr": 0.01,
        "top_n": 5,
        "instantiate": "finetune",
        "finetune_epochs": 5,
    },
    "eval": {
        "checkpoint": None,
        "corpus": None,
        "components": [],
        "em_max_iters": 100,
        "em_tol": 1.0e-10,
    },
    "rescore": {
        "nbest": None,
        "references": None,
        "lm_scale": 12.0,
        "insertion_penalty": 0.0,
        "synthetic_n": 20,
        "synthetic_seed": 0,
    },
    "gradcheck": {"tolerance": 1.0e-4, "seed": 0},
}

CHOICES = {
    "model.kind": ("lstm", "transformer"),
    "train.regularizer": ("none", "l1", "l2", "map"),
    "bayes.variant": ("none", "bayes", "gp", "latent"),
    "nas.variant": ("bayes", "gp"),
    "nas.instantiate": ("finetune", "retrain", "none"),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _check_type(key, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    return value


def _merge(base, update, prefix=""):
    if not isinstance(update, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {update!r}")
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            _merge(base[key], value, path + ".")
        else:
            base[key] = _check_type(path, value, DEFAULTS_FLAT.get(path))
    return base


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


DEFAULTS_FLAT = _flatten(DEFAULTS)


def parse_override(text):
    """``"a.b=value"`` -> nested dict ``{"a": {"b": value}}``."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: cannot parse value ({exc})") from None
    out = value
    for part in reversed(key.split(".")):
        out = {part: out}
    return out


def resolve_config(path=None, overrides=(), env=None):
    """Defaults <- seed env var <- config file <- overrides; then validated."""
    env = os.environ if env is None else env
    cfg = copy.deepcopy(DEFAULTS)
    if env.get(SEED_ENV):
        try:
            cfg["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: expected an integer, got {env[SEED_ENV]!r}") from None
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        _merge(cfg, doc)
    for o in overrides:
        _merge(cfg, parse_override(o))
    validate(cfg)
    return cfg


def validate(cfg):
    flat = _flatten(cfg)
    for key, choices in CHOICES.items():
        if flat[key] not in choices:
            raise ConfigError(f"{key}: expected one of {choices}, got {flat[key]!r}")
    positive = ("data.batch_size", "train.lr", "train.epochs", "nas.epochs", "nas.lr",
                "nas.top_n", "bayes.lr", "rescore.lm_scale", "bayes.num_samples",
                "model.num_layers")
    for key in positive:
        if not flat[key] > 0:
            raise ConfigError(f"{key}: must be positive, got {flat[key]!r}")
    for key in ("train.clip_norm", "bayes.clip_norm"):
        v = flat[key]
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0):
            raise ConfigError(f"{key}: must be a positive number or null, got {v!r}")
    if not 0.0 <= flat["model.dropout"] < 1.0:
        raise ConfigError(f"model.dropout: must be in [0, 1), got {flat['model.dropout']!r}")
    if flat["train.regularizer"] == "map" and not flat["train.map_reference"]:
        raise ConfigError("train.map_reference: required when train.regularizer is 'map'")
    for i, comp in enumerate(flat["eval.components"]):
        if not isinstance(comp, dict) or comp.get("kind") not in ("neural", "ngram", "uniform"):
            raise ConfigError(f"eval.components[{i}]: expected a mapping with kind "
                              "neural|ngram|uniform")
        if comp["kind"] != "uniform" and not comp.get("path"):
            raise ConfigError(f"eval.components[{i}].path: required for kind {comp['kind']}")
        extra = set(comp) - {"kind", "path"}
        if extra:
            raise ConfigError(f"eval.components[{i}]: unknown keys {sorted(extra)}")
    return cfg


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")
