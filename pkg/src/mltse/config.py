"""Run configuration files and stable config hashes."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def config_hash(cfg: dict) -> str:
    """Hash of a JSON-serialisable config, independent of key order."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> dict:
    """Read a JSON config file of flat or nested key/value pairs."""
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON config ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def merge(base: dict, overrides: dict) -> dict:
    """Recursive dict merge; ``None`` override values are ignored."""
    out = dict(base)
    for k, v in overrides.items():
        if v is None:
            continue
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out
