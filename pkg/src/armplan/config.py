"""Layered configuration: packaged defaults, optional user JSON file, then
explicit flag overrides.  Every tunable default lives in data/defaults.json."""

from __future__ import annotations

import json
from pathlib import Path

from .resources import defaults_path


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    config = json.loads(defaults_path().read_text())
    if path is not None:
        user = json.loads(Path(path).read_text())
        config = _deep_merge(config, user)
    if overrides:
        config = _deep_merge(config, overrides)
    return config
