"""Config plumbing: JSON loading, dataclass building with key checking."""

from __future__ import annotations

import dataclasses
import json

from .errors import ConfigError


def load_json_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config '{path}': {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config '{path}' is not valid JSON: line {e.lineno}: {e.msg}") from None


def build_dataclass(cls, d: dict, section: str):
    """Instantiate a config dataclass from a dict, rejecting unknown keys."""
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in d.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown key")
        default = getattr(cls, key, None)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from None


def flatten(d: dict, prefix: str = "") -> dict:
    """Nested dict -> flat 'a.b.c' keys with scalar/list values."""
    out = {}
    for k, v in d.items():
        key = f"{prefix}.{k}" if prefix else str(k)
        if isinstance(v, dict):
            out.update(flatten(v, key))
        else:
            out[key] = v
    return out


def unflatten(flat: dict) -> dict:
    out: dict = {}
    for key, v in flat.items():
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    return out
