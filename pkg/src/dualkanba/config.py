"""Flat dotted-key JSON configuration.

A config file is one JSON object whose keys address fields of the run
configuration: bare names (``"d"``, ``"n_layers"``) and ``adsa.*``, ``mamba.*``,
``kan.*`` set model fields, ``train.*`` the optimiser and loop, ``data.*`` the
synthetic task.  For example ``{"adsa.window": 2, "train.lr": 0.001}``.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .data import SynthSpec
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SynthSpec = field(default_factory=SynthSpec)


def _coerce(key, value, current):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{key}: not a settable field")


def _target(run, key):
    parts = key.split(".")
    if parts[0] in ("train", "data") and len(parts) == 2:
        return getattr(run, parts[0]), parts[1]
    obj = run.model
    for part in parts[:-1]:
        sub = getattr(obj, part, None)
        if not dataclasses.is_dataclass(sub):
            raise ConfigError(f"unknown config key {key!r}")
        obj = sub
    return obj, parts[-1]


def apply_overrides(run, flat):
    """Set every ``dotted.key: value`` pair of ``flat`` on ``run`` in place."""
    for key, value in flat.items():
        obj, name = _target(run, key)
        names = {f.name for f in dataclasses.fields(obj)}
        if name not in names or dataclasses.is_dataclass(getattr(obj, name)):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(obj, name, _coerce(key, value, getattr(obj, name)))
    return run


def load_config(path=None, seed=None):
    """Defaults, then the file at ``path``, then ``seed`` (applied to model, loop and data)."""
    run = RunConfig()
    if path:
        with open(path, encoding="utf-8") as fh:
            try:
                flat = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(flat, dict):
            raise ConfigError(f"{path}: expected a JSON object of dotted keys")
        apply_overrides(run, flat)
    if seed is not None:
        run.model.seed = run.train.seed = run.data.seed = int(seed)
    try:
        run.model.validate()
        run.train.validate()
        run.data.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return run


def flatten(obj, prefix=""):
    """Inverse of :func:`apply_overrides`: ``{dotted.key: value}`` for every field."""
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def model_config_from_flat(flat):
    """Rebuild a :class:`ModelConfig` from the flat dict written next to a checkpoint."""
    run = RunConfig()
    apply_overrides(run, {k: v for k, v in flat.items() if not k.startswith(("train.", "data."))})
    run.model.validate()
    return run.model


def save_run_config(run, path):
    flat = flatten(run.model)
    flat.update(flatten(run.train, "train."))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(flat, fh, indent=2, sort_keys=True)
        fh.write("\n")
