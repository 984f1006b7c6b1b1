"""Transmission-image rendering, feature matching and classification of 3D-printed infill."""

import json as _json

from ._transid import *  # noqa: F401,F403
from ._transid import __version__, default_config, resolve_config, run_experiment


def run(config, out=""):
    """Run an experiment from a dict or JSON text; returns its assertion records."""
    text = config if isinstance(config, str) else _json.dumps(config)
    return run_experiment(text, str(out))


def config(kind, **overrides):
    """Default config of `kind` as a dict, with top-level sections updated from `overrides`."""
    cfg = _json.loads(default_config(kind))
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg
