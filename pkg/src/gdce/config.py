"""Layered run configuration: defaults, then a JSON file, then dotted overrides.

The merged result is what a command actually ran with; every command dumps
it into its output directory so the run can be reproduced from the artifact
alone.
"""

import copy
import json
import os
from pathlib import Path

from .errors import ConfigError

SEED_ENV_VAR = "GDCE_SEED"

DEFAULTS = {
    "seed": 0,
    "data": {
        "num_classes": 4,
        "images_per_class": 500,
        "image_size": 64,
    },
    "shift": {
        "gamma": 1.0,
        "sigmoid_gain": 0.0,
        "sigmoid_center": 0.5,
        "window_shift": 0.0,
        "out_bit_depth": 16,
        "noise": 0.0,
    },
    "model": {
        "num_blocks": 4,
        "conv_channels": 16,
        "n_iterations": 8,
    },
    "extractor": {
        "tap": 2,
        "depth": 4,
        "channels": 16,
        "seed": 101,
    },
    "train": {
        "lr": 1e-4,
        "batch_size": 12,
        "epochs": 50,
        "val_fold": 4,
        "test_fold": None,
        "perceptual_reduction": "mean",
        "early_stop_target": None,
    },
}


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix}{key} must be a section")
            _merge(base[key], value, f"{prefix}{key}.")
        else:
            base[key] = value


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        loaded = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return loaded


def parse_override(text: str) -> tuple[str, object]:
    """'a.b=value' -> ('a.b', parsed value). Values parse as JSON, else string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_override(config: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = config
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {'.'.join(parts[: i + 1])}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"config key {dotted} is a section, not a value")
    node[leaf] = value


def build_config(file_path=None, overrides=()) -> dict:
    """Defaults <- config file <- --set overrides, unknown keys rejected."""
    config = copy.deepcopy(DEFAULTS)
    if file_path is not None:
        _merge(config, load_config_file(file_path))
    for text in overrides:
        key, value = parse_override(text)
        apply_override(config, key, value)
    return config


def resolve_seed(config: dict, flag_seed=None) -> int:
    """Flag beats the environment beats the config file."""
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    return int(config["seed"])


def dump_config(config: dict, out_dir) -> Path:
    path = Path(out_dir) / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return path


def prepare_out_dir(path, force: bool = False) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    if not force and any(out.iterdir()):
        raise ConfigError(f"output directory {out} is not empty (pass --force to write anyway)")
    return out
