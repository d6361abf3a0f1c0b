"""Run configuration: JSON file with per-subsystem sections and a mandatory seed.

Every section maps onto a dataclass in its owning module. Unknown keys are
rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
import os
from typing import Any

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8714
DEFAULT_WS_PORT = 8715


class ConfigError(ValueError):
    pass


def build(cls, data: dict[str, Any] | None, **overrides):
    """Instantiate a config dataclass from a dict, rejecting unknown keys."""
    data = dict(data or {})
    data.update(overrides)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**data)


def load_config(path: str) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    if "seed" not in raw:
        raise ConfigError("config requires an explicit 'seed'")
    return raw


def transport_endpoint(cfg: dict[str, Any] | None = None) -> tuple[str, int, int]:
    """(host, tcp_port, ws_port) from config section, overridable by environment."""
    section = (cfg or {}).get("transport", {}) if cfg else {}
    host = os.environ.get("DALKSIM_HOST", section.get("host", DEFAULT_HOST))
    port = int(os.environ.get("DALKSIM_PORT", section.get("port", DEFAULT_PORT)))
    ws_port = int(os.environ.get("DALKSIM_WS_PORT", section.get("ws_port", DEFAULT_WS_PORT)))
    return host, port, ws_port
