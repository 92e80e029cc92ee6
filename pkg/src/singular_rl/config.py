"""Experiment configuration: one TOML file shared by every subcommand.

Top-level keys ``mu, sigma, a, c, beta`` give the benchmark parameters and a
``[horizon]`` table selects ``kind = "infinite"`` (with ``t_trunc``) or
``kind = "finite"`` (with ``t`` and an optional constant ``terminal_cost``).
The remaining tables (``sim``, ``law``, ``grid``, ``evaluate``, ``pi``,
``learn``, ``verify``) are optional and fall back to ``DEFAULTS``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import tomli

from .model import ExpCostParams, FiniteHorizon, ModelSpec, make_exp_cost_model


class ConfigError(ValueError):
    """Missing or malformed configuration key."""


REQUIRED = ("mu", "sigma", "a", "c", "beta", "horizon.kind")

DEFAULTS: dict[str, Any] = {
    "sim": {"dt": 0.02, "seed": 0, "paths": 1, "x0": 1.0, "t0": 0.0, "y0": 0.0},
    "law": {"boundary": "xhat"},
    "grid": {"lo": -5.0, "hi": 5.0, "step": 0.01},
    "evaluate": {"paths": 10000},
    "pi": {"x0": 3.0, "max_iter": 100, "tol": 1e-12},
    "learn": {
        "algo": "td0-simplified",
        "episodes": 100,
        "alpha_theta": [0.5, 0.7, 1.8],
        "schedule": {"kind": "geometric", "rate": 1.055},
        "guess": {"mu": 0.1, "sigma": 0.5, "a": 0.08},
        "normalize_rates": False,
    },
    "verify": {"paths": 2000, "perturb_xhat": 0.0, "control_cost_drift": 0.0},
}


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def get(cfg: Mapping, dotted: str):
    node: Any = cfg
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            raise ConfigError(f"missing config key '{dotted}'")
        node = node[part]
    return node


def set_key(cfg: dict, dotted: str, value) -> None:
    *parents, last = dotted.split(".")
    node = cfg
    for part in parents:
        node = node.setdefault(part, {})
    node[last] = value


def _number(cfg, key) -> float:
    v = get(cfg, key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config key '{key}' must be a number, got {v!r}")
    return float(v)


def validate(cfg: Mapping) -> None:
    for key in REQUIRED:
        get(cfg, key)
    kind = get(cfg, "horizon.kind")
    if kind == "infinite":
        _number(cfg, "horizon.t_trunc")
    elif kind == "finite":
        _number(cfg, "horizon.t")
    else:
        raise ConfigError(f"config key 'horizon.kind' must be 'finite' or 'infinite', got {kind!r}")
    for key in ("mu", "sigma", "a", "c", "beta", "sim.dt"):
        _number(cfg, key)


def from_mapping(raw: Mapping) -> dict:
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return cfg


def load(path) -> dict:
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from err
    return from_mapping(raw)


def digest(cfg: Mapping) -> str:
    """sha256 of the canonical JSON form of the effective config."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def params(cfg: Mapping) -> ExpCostParams:
    return ExpCostParams(*(_number(cfg, k) for k in ("mu", "sigma", "a", "c", "beta")))


def model(cfg: Mapping) -> ModelSpec:
    """The benchmark model; a finite horizon uses a constant terminal cost."""
    p = params(cfg)
    if get(cfg, "horizon.kind") == "infinite":
        return make_exp_cost_model(p, _number(cfg, "horizon.t_trunc"))
    T = _number(cfg, "horizon.t")
    F = float(cfg["horizon"].get("terminal_cost", 0.0))
    base = make_exp_cost_model(p, T)
    return ModelSpec(
        base.drift, base.vol, base.running_cost, base.control_cost, base.discount,
        FiniteHorizon(T), terminal_cost=lambda x, y: np.full(np.shape(x), F),
    )


def parse_grid(text: str) -> np.ndarray:
    """``"lo:hi:step"`` to an inclusive grid."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError as err:
        raise ConfigError(f"grid must be lo:hi:step, got {text!r}") from err
    if not step > 0 or hi < lo:
        raise ConfigError(f"grid needs step > 0 and hi >= lo, got {text!r}")
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def default_config_text() -> str:
    """The benchmark experiment as a TOML file."""
    return (Path(__file__).with_name("benchmark.toml")).read_text()
