"""Run configuration: defaults, JSON schema validation and seed overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import jsonschema

DEFAULTS = {
    "geometry": {"name": "cube"},
    "interface": {"margin": 0.5, "splits": [1, 1, 1], "nodes": 7, "quad_order": 8},
    "kappa": 1.0,
    "direction": [0.0, 0.0, 1.0],
    "eta": None,
    "degree": 2,
    "max_level": 2,
    "level_offset": 0,
    "rule": "qmc",
    "budget": {"a": 10, "r": 6, "n_min": 4},
    "qmc_offset": 0,
    "sparse_grid": {"q0": 1.0, "step": 1.0},
    "kernel": {"amplitude": 0.05, "length": 4.0},
    "kl": {"degree": 2, "level": 0, "tol": 1e-8, "trace_frac": 0.99, "max_modes": 20},
    "seeds": {"truth": 0, "noise": 1},
    "inversion": {"sigma_rel": 0.1, "level": None, "squared": True, "points_per_patch": 3},
    "checkpoints": {"radius": 5.0, "count": 100, "center": None, "seed": 0},
    "verify": {"radius": 3.0, "count": 20, "tol": 1e-3},
    "output": "igauq-out",
    "cache": None,
    "checkpoint_every": 64,
}


class ConfigError(ValueError):
    pass


def schema():
    text = resources.files("igauq").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "geometry":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw: dict):
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc


def resolve(raw: dict) -> dict:
    """Validate a user config and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return cfg


def load(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return raw


def apply_seed_overrides(raw: dict, overrides) -> dict:
    """Apply ``k=v`` seed overrides (integer values) to ``raw['seeds']``."""
    out = copy.deepcopy(raw)
    seeds = out.setdefault("seeds", {})
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"seed override {item!r} is not of the form k=v")
        k, v = item.split("=", 1)
        try:
            seeds[k.strip()] = int(v)
        except ValueError as exc:
            raise ConfigError(f"seed override {item!r} needs an integer value") from exc
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
