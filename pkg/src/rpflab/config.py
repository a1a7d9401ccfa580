"""Strict JSON configuration for the command-line tools.

Unknown keys anywhere in a configuration are errors, so a typo never
silently falls back to a default.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .grid import GridFunction, circle_distance
from .maps import NEUTRAL_THRESHOLD, MapModel, k_fold, pm_log, pomeau_manneville, tabulated_map
from .moduli import ModulusSpec, choose_r0, eval_modulus
from .transport import DiscreteMeasure

__all__ = ["ConfigError", "load_config", "build_map", "build_modulus", "build_function",
           "build_measure", "TOP_LEVEL_KEYS"]


class ConfigError(ValueError):
    pass


TOP_LEVEL_KEYS = {
    "map", "potential", "potential_modulus", "target_modulus", "observable",
    "observable_b", "grid_size", "merge_resolution", "tolerances", "seed",
    "flatness", "decay", "wasserstein", "coupling",
}


def check_keys(d: Any, allowed: set, where: str, required: set = frozenset()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    return d


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    check_keys(cfg, TOP_LEVEL_KEYS, "config")
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def _resolve(cfg: dict, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else Path(cfg.get("_base", ".")) / path


def _num(d: dict, key: str, where: str, default=None, positive=False) -> float:
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: expected a finite number")
    if positive and v <= 0:
        raise ConfigError(f"{where}.{key}: must be positive")
    return float(v)


def build_map(cfg: dict) -> MapModel:
    spec = cfg.get("map")
    if spec is None:
        raise ConfigError("config: missing 'map'")
    kind = check_keys(spec, {"kind", "q", "k", "table", "lambda", "contraction",
                             "neutral_radius", "contracted_branch", "neutral_threshold"},
                      "map", {"kind"})["kind"]
    try:
        if kind == "pm":
            check_keys(spec, {"kind", "q", "neutral_threshold"}, "map", {"q"})
            return pomeau_manneville(_num(spec, "q", "map", positive=True),
                        _num(spec, "neutral_threshold", "map", NEUTRAL_THRESHOLD))
        if kind == "pm_log":
            check_keys(spec, {"kind", "q", "neutral_threshold"}, "map", {"q"})
            return pm_log(_num(spec, "q", "map", positive=True),
                        _num(spec, "neutral_threshold", "map", NEUTRAL_THRESHOLD))
        if kind == "k_fold":
            check_keys(spec, {"kind", "k"}, "map", {"k"})
            return k_fold(int(_num(spec, "k", "map")))
        if kind == "custom":
            check_keys(spec, {"kind", "table", "lambda", "contraction", "neutral_radius",
                              "contracted_branch"}, "map", {"table", "lambda", "contraction"})
            data = np.loadtxt(_resolve(cfg, spec["table"]), delimiter=",", skiprows=1, ndmin=2)
            check_keys(spec["contraction"], {"form", "lambda", "q", "D"}, "map.contraction", {"form"})
            return tabulated_map(data[:, 0], data[:, 1:].T, _num(spec, "lambda", "map"),
                                 spec["contraction"], spec.get("neutral_radius", 0.0),
                                 spec.get("contracted_branch"))
    except (ValueError, OSError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"map: {exc}") from exc
    raise ConfigError(f"map.kind: unknown kind {kind!r}")


def build_modulus(spec: Any, where: str) -> ModulusSpec:
    check_keys(spec, {"alpha", "beta", "r0"}, where, {"alpha"})
    alpha = _num(spec, "alpha", where)
    beta = _num(spec, "beta", where, 0.0)
    try:
        if "r0" in spec:
            return ModulusSpec(alpha, beta, _num(spec, "r0", where, positive=True))
        return choose_r0(alpha, beta)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _formula(cfg: dict, spec: dict, where: str, m: MapModel | None) -> Callable:
    allowed = {"formula", "value", "amplitude", "frequency", "phase", "terms", "center",
               "exponent", "scale", "alpha", "beta", "offset", "base", "epsilon"}
    check_keys(spec, allowed, where, {"formula"})
    kind = spec["formula"]
    if kind == "zero":
        return lambda x: np.zeros_like(x)
    if kind == "constant":
        c = _num(spec, "value", where)
        return lambda x: np.full_like(x, c)
    if kind == "cosine":
        a = _num(spec, "amplitude", where, 1.0)
        k = _num(spec, "frequency", where, 1.0)
        ph = _num(spec, "phase", where, 0.0)
        return lambda x: a * np.cos(2 * np.pi * k * x + ph)
    if kind == "trig":
        terms = spec.get("terms")
        if not isinstance(terms, list) or not all(isinstance(t, list) and len(t) == 3 for t in terms):
            raise ConfigError(f"{where}.terms: expected a list of [frequency, cos, sin]")
        terms = [tuple(float(v) for v in t) for t in terms]
        return lambda x: sum(c * np.cos(2 * np.pi * k * x) + s * np.sin(2 * np.pi * k * x)
                             for k, c, s in terms) + 0 * x
    if kind == "distance_power":
        c0 = _num(spec, "center", where, 0.0)
        e = _num(spec, "exponent", where, positive=True)
        sc = _num(spec, "scale", where, 1.0)
        return lambda x: sc * circle_distance(x, c0) ** e
    if kind == "modulus_of_distance":
        c0 = _num(spec, "center", where, 0.0)
        sc = _num(spec, "scale", where, 1.0)
        w = build_modulus({k: spec[k] for k in ("alpha", "beta") if k in spec}, where)
        return lambda x: sc * eval_modulus(w, circle_distance(x, c0))
    if kind == "coboundary":
        if m is None or not m.has_forward:
            raise ConfigError(f"{where}: coboundary needs a map with a forward branch")
        off = _num(spec, "offset", where, 1.5)
        amp = _num(spec, "amplitude", where, 1.0)
        if off <= abs(amp):
            raise ConfigError(f"{where}: offset must exceed |amplitude|")
        g = lambda x: off + amp * np.cos(2 * np.pi * x)
        return lambda x: math.log(m.k) + np.log(g(m.forward(x))) - np.log(g(x))
    if kind == "flattened":
        base = _formula(cfg, spec.get("base", {}), f"{where}.base", m)
        eps = _num(spec, "epsilon", where, positive=True)
        b0 = float(base(np.array([0.0]))[0])

        def flat(x):
            x = np.asarray(x, dtype=float)
            d = circle_distance(x, 0.0)
            side = np.where(np.mod(x, 1.0) < 0.5, eps, -eps)
            edge = base(np.mod(side, 1.0))
            ramp = b0 + (d - eps / 2) / (eps / 2) * (edge - b0)
            return np.where(d <= eps / 2, b0, np.where(d < eps, ramp, base(x)))
        return flat
    raise ConfigError(f"{where}.formula: unknown formula {kind!r}")


def build_function(cfg: dict, key: str, n: int, m: MapModel | None = None) -> GridFunction:
    spec = cfg.get(key)
    if spec is None:
        raise ConfigError(f"config: missing {key!r}")
    if isinstance(spec, dict) and "csv" in spec:
        check_keys(spec, {"csv"}, key)
        try:
            data = np.loadtxt(_resolve(cfg, spec["csv"]), delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        return GridFunction(data[:, -1])
    f = _formula(cfg, spec, key, m)
    return GridFunction.from_callable(f, n)


def build_measure(cfg: dict, spec: Any, where: str) -> DiscreteMeasure:
    check_keys(spec, {"positions", "masses", "csv"}, where)
    try:
        if "csv" in spec:
            return DiscreteMeasure.from_csv(_resolve(cfg, spec["csv"]))
        pos = np.asarray(spec["positions"], dtype=float)
        mass = np.asarray(spec.get("masses", np.full(pos.size, 1.0 / max(pos.size, 1))), dtype=float)
        return DiscreteMeasure(pos, mass)
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def grid_size(cfg: dict) -> int:
    n = int(_num(cfg, "grid_size", "config", 4096.0, positive=True))
    if n < 16:
        raise ConfigError("config.grid_size: must be at least 16")
    return n


def section(cfg: dict, key: str, allowed: set) -> dict:
    return check_keys(cfg.get(key, {}), allowed, key)


def echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}
