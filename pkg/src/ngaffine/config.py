"""Run configuration: TOML schema, strict validation, content hashing.

A run config is a TOML document with a pinned ``schema_version``, a
parameter-box section, a payoff section, one method section and optional
sweep/output settings.  Validation is strict: unknown keys anywhere are
rejected, with the offending key named, before any computation starts.

Box coefficients are parsed from their decimal spellings exactly as written
(IEEE round-to-nearest via the TOML float lexer), so a config hash pins the
numbers actually used.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import BOX_FIELDS, ParameterBox
from . import payoffs as payoff_lib

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_overrides"]

SCHEMA_VERSION = 1

METHODS = ("fd", "fd_asian", "fd_cir", "mc", "worst_case_cir", "lower_bound",
           "bsde", "merton", "contagion_lower_bound")

PAYOFF_KINDS = {
    "asian_put": {"k1": float, "k2": float, "maturity": float,
                  "integral_rule": str},
    "digital_up_in": {"barrier": float},
    "merton_bond": {"face": float},
    "merton_equity": {"face": float},
    "black_cox_put": {"strike": float, "threshold": float,
                      "climate_damage": float},
    "capped_call": {"strike": float, "cap": float},
    "contagion_put": {"firm": int, "strike": float, "threshold_1": float,
                      "threshold_2": float, "e12": float, "e21": float},
}

_SECTION_KEYS: dict[str, dict[str, type]] = {
    "meta": {"schema_version": int, "label": str},
    "run": {"method": str, "seed": int, "horizon": float},
    "box": {k: float for k in BOX_FIELDS},
    "model": {"half_inside": bool, "selector": str},
    "payoff": None,  # depends on kind
    "grid": {"x_min": float, "x_max": float, "n_x": int, "n_t": int,
             "safety": float, "n_report": int},
    "grid2d": {"y_min": float, "y_max": float, "n_y": int,
               "z_min": float, "z_max": float, "n_z": int, "n_t": int,
               "safety": float, "n_report": int},
    "mc": {"n_paths": int, "n_steps": int, "x0": float, "scheme": str,
           "antithetic": bool},
    "bsde": {"n_steps": int, "batch_size": int, "train_steps": int,
             "learning_rate": float, "hidden": int, "dtype": str,
             "runs": int, "log_every": int, "lr_schedule": list,
             "include_running_max": bool},
    "sweep": {"x0": list, "face": list},
    "model2d": {
        "b0_1_lo": float, "b0_1_hi": float, "b1_1_lo": float, "b1_1_hi": float,
        "b0_2_lo": float, "b0_2_hi": float, "b1_2_lo": float, "b1_2_hi": float,
        "var1_lo": float, "var1_hi": float, "var2_lo": float, "var2_hi": float,
        "rho_lo": float, "rho_hi": float,
        "x0_1": float, "x0_2": float, "n_paths": int, "n_steps": int,
    },
    "output": {"dir": str},
}

_REQUIRED = {
    "meta": ("schema_version",),
    "run": ("method", "horizon"),
    "payoff": ("kind",),
}

_METHOD_SECTIONS = {
    "fd": ("box", "grid"),
    "fd_asian": ("box", "grid2d"),
    "fd_cir": ("box", "grid"),
    "mc": ("box", "mc"),
    "worst_case_cir": ("box", "mc"),
    "lower_bound": ("box", "mc"),
    "bsde": ("box", "bsde"),
    "merton": ("box", "grid", "sweep"),
    "contagion_lower_bound": ("model2d",),
}


class ConfigError(ValueError):
    """Schema violation; the message names the offending key."""


def _check_type(path: str, value, expected: type) -> None:
    if expected is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
    elif expected is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif not isinstance(value, expected):
        raise ConfigError(
            f"{path}: expected {expected.__name__}, got {value!r}")


def _validate_section(name: str, data: Mapping, keys: Mapping[str, type]) -> None:
    for key, value in data.items():
        if key not in keys:
            raise ConfigError(f"unknown key [{name}].{key}")
        _check_type(f"[{name}].{key}", value, keys[key])


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration with typed accessors."""

    raw: dict
    source: str = "<memory>"

    @property
    def method(self) -> str:
        return self.raw["run"]["method"]

    @property
    def seed(self) -> int:
        return int(self.raw["run"].get("seed", 0))

    @property
    def horizon(self) -> float:
        return float(self.raw["run"]["horizon"])

    @property
    def label(self) -> str:
        return self.raw.get("meta", {}).get("label", Path(self.source).stem)

    @property
    def half_inside(self) -> bool:
        return bool(self.raw.get("model", {}).get("half_inside", False))

    @property
    def selector(self) -> str:
        return self.raw.get("model", {}).get("selector", "midpoint")

    def box(self) -> ParameterBox:
        return ParameterBox(**{k: float(self.raw["box"][k]) for k in BOX_FIELDS})

    def payoff(self):
        spec = dict(self.raw["payoff"])
        kind = spec.pop("kind")
        if kind == "asian_put":
            spec.setdefault("maturity", self.horizon)
            return payoff_lib.AsianPutCapped(
                spec["k1"], spec["k2"], spec["maturity"],
                spec.get("integral_rule", "trapezoid"))
        if kind == "digital_up_in":
            return payoff_lib.UpAndInDigital(spec["barrier"])
        if kind == "merton_bond":
            return payoff_lib.MertonBond(spec["face"])
        if kind == "merton_equity":
            return payoff_lib.MertonEquity(spec["face"])
        if kind == "black_cox_put":
            level = spec["threshold"] + spec.get("climate_damage", 0.0)
            return payoff_lib.BlackCoxPut(spec["strike"], level)
        if kind == "capped_call":
            return payoff_lib.CappedCall(spec["strike"], spec["cap"])
        if kind == "contagion_put":
            credit = payoff_lib.CreditSpec(
                threshold=spec["threshold_1"], threshold_2=spec["threshold_2"],
                e12=spec["e12"], e21=spec["e21"], strike=spec["strike"])
            return payoff_lib.ContagionPut(spec["firm"], credit)
        raise ConfigError(f"unknown payoff kind {kind!r}")

    def sweep_x0(self) -> list[float]:
        sweep = self.raw.get("sweep")
        if sweep and "x0" in sweep:
            return [float(v) for v in sweep["x0"]]
        if "mc" in self.raw and "x0" in self.raw["mc"]:
            return [float(self.raw["mc"]["x0"])]
        raise ConfigError("no x0 given: set [sweep].x0 or [mc].x0")

    def config_hash(self) -> str:
        payload = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


def validate(raw: dict, source: str = "<memory>") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    for section in raw:
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]")
    for section, required in _REQUIRED.items():
        if section not in raw:
            raise ConfigError(f"missing section [{section}]")
        for key in required:
            if key not in raw[section]:
                raise ConfigError(f"missing key [{section}].{key}")
    if "box" in raw:
        for key in BOX_FIELDS:
            if key not in raw["box"]:
                raise ConfigError(f"missing key [box].{key}")
    version = raw["meta"]["schema_version"]
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"[meta].schema_version: expected {SCHEMA_VERSION}, got {version}")
    for section, data in raw.items():
        if section == "payoff":
            continue
        _validate_section(section, data, _SECTION_KEYS[section])
    payoff = raw["payoff"]
    kind = payoff.get("kind")
    if kind not in PAYOFF_KINDS:
        raise ConfigError(
            f"[payoff].kind: unknown payoff {kind!r}; choose from "
            f"{sorted(PAYOFF_KINDS)}")
    allowed = dict(PAYOFF_KINDS[kind], kind=str)
    _validate_section("payoff", payoff, allowed)
    method = raw["run"]["method"]
    if method not in METHODS:
        raise ConfigError(f"[run].method: unknown method {method!r}")
    for needed in _METHOD_SECTIONS[method]:
        if needed not in raw:
            raise ConfigError(f"method {method!r} requires section [{needed}]")
    if "bsde" in raw and "lr_schedule" in raw["bsde"]:
        for item in raw["bsde"]["lr_schedule"]:
            if (not isinstance(item, list) or len(item) != 2
                    or not isinstance(item[0], int)):
                raise ConfigError(
                    "[bsde].lr_schedule entries must be [step, rate] pairs")
    cfg = RunConfig(raw, source)
    if "box" in raw:
        cfg.box()  # interval / sign violations surface here
    cfg.payoff()   # payoff parameter violations surface here
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return validate(raw, source=str(path))


def parse_overrides(pairs: list[str]) -> dict:
    """--override a.b=value pairs parsed with TOML literal semantics."""
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, text = pair.split("=", 1)
        try:
            value = tomllib.loads(f"v = {text}")["v"]
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"override {pair!r}: bad value ({exc})") from exc
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def merge_overrides(raw: dict, overrides: dict) -> dict:
    merged = json.loads(json.dumps(raw))  # deep copy, TOML types are JSON-safe
    def rec(dst, src):
        for k, v in src.items():
            if isinstance(v, dict) and isinstance(dst.get(k), dict):
                rec(dst[k], v)
            else:
                dst[k] = v
    rec(merged, overrides)
    return merged
