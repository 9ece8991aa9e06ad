"""Experiment configuration: one JSON document plus dotted overrides.

Layout::

    {
      "dims":    {"d": 64, "p": 64, "h": 128, "depth": 5},
      "memory":  {"n_knowledge": 32, "c": 8, "seed": 1, "margin": 0.5},
      "editing": {"editor": "mose", "lam": 1.0, "n_edits": 200, "batch_size": 1,
                  "rank_tol": 0.0, "reortho_interval": 100, "anchor": "current",
                  "refresh_k0": false, "scale": 0.05, "base": "memory",
                  "stream_seed": 0, "editor_seed": 0},
      "eval":    {"rho": 0.1, "m_neighbors": 4, "eval_every": 10, "drift_samples": 200},
      "output":  {"directory": "out", "formats": ["csv", "json"]}
    }

``dims.d``, ``dims.p``, ``memory.n_knowledge``, ``memory.c``,
``memory.seed``, ``editing.editor`` and ``editing.n_edits`` are required;
everything else has the default shown.  All randomness comes from
``memory.seed``, ``editing.stream_seed`` and ``editing.editor_seed``.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .editors import EDITORS
from .errors import ConfigError

__all__ = ["DEFAULTS", "OUTPUT_ENV", "REQUIRED", "apply_overrides", "load_config", "parse_overrides", "validate"]

OUTPUT_ENV = "MOSE_OUTPUT_DIR"

REQUIRED = (
    "dims.d",
    "dims.p",
    "memory.n_knowledge",
    "memory.c",
    "memory.seed",
    "editing.editor",
    "editing.n_edits",
)

DEFAULTS: dict[str, dict[str, Any]] = {
    "dims": {"h": 128, "depth": 5},
    "memory": {"margin": 0.5},
    "editing": {
        "lam": 1.0,
        "batch_size": 1,
        "rank_tol": 0.0,
        "reortho_interval": 100,
        "anchor": "current",
        "refresh_k0": False,
        "scale": 0.05,
        "base": "memory",
        "stream_seed": 0,
        "editor_seed": 0,
    },
    "eval": {"rho": 0.1, "m_neighbors": 4, "eval_every": 10, "drift_samples": 200},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}

FORMATS = ("csv", "json")


def _get(cfg: Mapping, path: str):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, Mapping) or part not in node:
            raise ConfigError(path, "missing required field")
        node = node[part]
    return node


def _int(cfg, path, lo=None, allow_zero=False):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    lo = (0 if allow_zero else 1) if lo is None else lo
    if v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")


def _real(cfg, path, positive=True):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if positive and not v > 0 or not positive and not v >= 0:
        raise ConfigError(path, f"must be {'> 0' if positive else '>= 0'}, got {v}")


def _choice(cfg, path, options):
    v = _get(cfg, path)
    if v not in options:
        raise ConfigError(path, f"expected one of {list(options)}, got {v!r}")


def validate(raw: Mapping) -> dict:
    """Fill defaults and check every field; returns a new dict.

    Raises
    ------
    ConfigError
        Naming the dotted path of the first offending field.
    """
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "config must be a JSON object")
    for path in REQUIRED:
        _get(raw, path)
    cfg = copy.deepcopy(dict(raw))
    for section, defaults in DEFAULTS.items():
        node = cfg.setdefault(section, {})
        if not isinstance(node, Mapping):
            raise ConfigError(section, "expected an object")
        for key, value in defaults.items():
            node.setdefault(key, copy.deepcopy(value))
    for section, node in cfg.items():
        if section not in DEFAULTS:
            raise ConfigError(section, "unknown section")
        known = set(DEFAULTS[section]) | {p.split(".")[1] for p in REQUIRED if p.startswith(section + ".")}
        for key in node:
            if key not in known:
                raise ConfigError(f"{section}.{key}", "unknown field")

    for path in ("dims.d", "dims.p", "dims.h", "memory.c", "editing.n_edits", "editing.batch_size"):
        _int(cfg, path)
    _int(cfg, "dims.depth", lo=3)
    for path in ("memory.n_knowledge", "memory.seed", "editing.stream_seed", "editing.editor_seed"):
        _int(cfg, path, allow_zero=True)
    _int(cfg, "editing.reortho_interval", allow_zero=True)
    _int(cfg, "eval.m_neighbors")
    _int(cfg, "eval.eval_every")
    _int(cfg, "eval.drift_samples")
    for path in ("editing.lam", "editing.scale", "eval.rho", "memory.margin"):
        _real(cfg, path)
    _real(cfg, "editing.rank_tol", positive=False)
    if not cfg["eval"]["rho"] <= 0.5:
        raise ConfigError("eval.rho", f"must be <= 0.5, got {cfg['eval']['rho']}")
    _choice(cfg, "editing.editor", EDITORS)
    _choice(cfg, "editing.anchor", ("current", "w0"))
    _choice(cfg, "editing.base", ("memory", "orthogonal"))
    if not isinstance(cfg["editing"]["refresh_k0"], bool):
        raise ConfigError("editing.refresh_k0", "expected true or false")
    if cfg["editing"]["base"] == "orthogonal" and cfg["dims"]["d"] != cfg["dims"]["p"]:
        raise ConfigError("editing.base", "an orthogonal base needs d == p")
    if cfg["memory"]["c"] > cfg["dims"]["d"]:
        raise ConfigError("memory.c", f"must be <= dims.d={cfg['dims']['d']}")
    if cfg["memory"]["n_knowledge"] > cfg["dims"]["p"]:
        raise ConfigError("memory.n_knowledge", f"must be <= dims.p={cfg['dims']['p']}")
    if cfg["dims"]["d"] < 8 or cfg["dims"]["p"] < 8:
        raise ConfigError("dims.d" if cfg["dims"]["d"] < 8 else "dims.p", "must be >= 8")
    if not isinstance(cfg["output"]["directory"], str) or not cfg["output"]["directory"]:
        raise ConfigError("output.directory", "expected a non-empty path")
    formats = cfg["output"]["formats"]
    if not isinstance(formats, list) or not formats or any(f not in FORMATS for f in formats):
        raise ConfigError("output.formats", f"expected a non-empty subset of {list(FORMATS)}")
    return cfg


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(args: Sequence[str]) -> list[tuple[str, Any]]:
    """``["--editing.lam=0.5"]`` -> ``[("editing.lam", 0.5)]``; values are parsed as JSON when possible."""
    out = []
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(arg, "overrides take the form --section.key=value")
        path, value = arg[2:].split("=", 1)
        if path.count(".") != 1:
            raise ConfigError(path, "override path must be section.key")
        out.append((path, _coerce(value)))
    return out


def apply_overrides(raw: Mapping, overrides: Sequence[tuple[str, Any]]) -> dict:
    cfg = copy.deepcopy(dict(raw))
    for path, value in overrides:
        section, key = path.split(".")
        node = cfg.setdefault(section, {})
        if not isinstance(node, dict):
            raise ConfigError(section, "expected an object")
        node[key] = value
    return cfg


def load_config(path, overrides: Sequence[tuple[str, Any]] = (), env: Optional[Mapping[str, str]] = None) -> dict:
    """Read, override and validate a config file.

    Precedence, highest first: explicit overrides, the ``MOSE_OUTPUT_DIR``
    environment variable (output directory only), the file.
    """
    env = os.environ if env is None else env
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("<file>", f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    if env.get(OUTPUT_ENV):
        raw = apply_overrides(raw, [("output.directory", env[OUTPUT_ENV])])
    return validate(apply_overrides(raw, overrides))
