"""YAML experiment configs: schema, environment overrides and engine builders.

Precedence, lowest to highest: built-in defaults, preset, config file,
``STELAB_*`` environment variables, command-line flags.  Nested keys are
addressed in the environment with a double underscore, e.g.
``STELAB_MODEL__ETA=0.02`` or ``STELAB_SIMULATION__RUNS=3``.
"""

from __future__ import annotations

import copy
import functools
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from ..errors import ConfigError
from ..model import ModelConfig, TeacherDist, TeacherSpec
from ..ode import OdeConfig, TeacherMeasure
from ..pde import PdeConfig
from ..quantizer import make_quantizer
from ..simulator import SimConfig

KINDS = ("simulate", "ode", "pde", "fixedpoint", "sweep", "reproduce")
FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "appF")
ENV_PREFIX = "STELAB_"

_quantizer = {
    "oneOf": [
        {"type": "null"},
        {
            "type": "object",
            "properties": {
                "bits": {"type": "integer", "minimum": 2},
                "omega": {"type": "number", "exclusiveMinimum": 0},
                "temperature": {"type": "number", "minimum": 0},
            },
            "required": ["bits", "omega"],
            "additionalProperties": False,
        },
    ]
}
_num_list = {"type": "array", "items": {"type": "number"}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stelab experiment",
    "type": "object",
    "properties": {
        "kind": {"enum": list(KINDS)},
        "figure": {"enum": list(FIGURES)},
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "plot": {"type": "boolean"},
        "model": {
            "type": "object",
            "properties": {
                "weight": _quantizer,
                "input": _quantizer,
                "ridge": {"type": "number", "minimum": 0},
                "eta": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "teacher": {
            "type": "object",
            "properties": {
                "dim": {"type": "integer", "minimum": 1},
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "dist": {"enum": ["all_ones", "gaussian", "rademacher"]},
                "mean": {"type": "number"},
                "var": {"type": "number", "minimum": 0},
                "noise_var": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {
                "horizon_tau": {"type": "number", "exclusiveMinimum": 0},
                "record_stride_tau": {"type": "number", "exclusiveMinimum": 0},
                "runs": {"type": "integer", "minimum": 1},
                "init": {"enum": ["gaussian", "zero"]},
                "histogram_taus": _num_list,
                "hist_bins": {"type": "integer", "minimum": 1},
                "hist_range": {"oneOf": [{"type": "null"}, {**_num_list, "minItems": 2, "maxItems": 2}]},
            },
            "additionalProperties": False,
        },
        "ode": {
            "type": "object",
            "properties": {
                "step_dtau": {"type": "number", "exclusiveMinimum": 0},
                "horizon_tau": {"type": "number", "exclusiveMinimum": 0},
                "record_stride_tau": {"type": "number", "exclusiveMinimum": 0},
                "m0": {"type": "number"},
                "q0": {"type": "number", "minimum": 0},
                "s_floor": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "pde": {
            "type": "object",
            "properties": {
                "cells": {"type": "integer", "minimum": 3},
                "w_min": {"type": ["number", "null"]},
                "w_max": {"type": ["number", "null"]},
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "horizon_tau": {"type": "number", "exclusiveMinimum": 0},
                "record_taus": _num_list,
                "drift_temperature": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "fixedpoint": {
            "type": "object",
            "properties": {"variant": {"enum": ["appendix", "main_text"]}},
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "b_w": {"type": "array", "items": {"type": ["integer", "null"]}},
                "omega_w": _num_list,
                "b_x": {"type": "array", "items": {"type": ["integer", "null"]}},
                "omega_x": _num_list,
                "eta": _num_list,
                "lambda": _num_list,
            },
            "additionalProperties": False,
        },
        "preset": {"type": "object"},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "kind": "ode",
    "out": "results",
    "seed": 0,
    "threads": 1,
    "plot": False,
    "model": {"weight": None, "input": None, "ridge": 0.0, "eta": 0.1},
    "teacher": {"dim": 900, "rho": 1.0, "dist": "all_ones", "mean": 0.0, "var": 1.0, "noise_var": 0.0},
    "simulation": {"horizon_tau": 10.0, "record_stride_tau": 1.0, "runs": 5, "init": "gaussian",
                   "histogram_taus": [], "hist_bins": 101, "hist_range": None},
    "ode": {"step_dtau": 0.01, "horizon_tau": 10.0, "record_stride_tau": 1.0, "m0": 0.0, "q0": 1.0,
            "s_floor": 1e-10},
    "pde": {"cells": 400, "w_min": None, "w_max": None, "dt": None, "horizon_tau": 10.0,
            "record_taus": [0.0, 10.0], "drift_temperature": 0.0},
    "fixedpoint": {"variant": "appendix"},
    "sweep": {"b_w": [None], "omega_w": [1.0], "b_x": [None], "omega_x": [1.0], "eta": [0.01], "lambda": [0.0]},
}


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("weight", "input"):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_overrides(environ=None) -> dict:
    """Nested dict from ``STELAB_A__B=value`` variables; values parsed as YAML scalars."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {name}={raw!r}") from exc
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return out


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def resolve(file_cfg: dict | None = None, cli: dict | None = None, preset: dict | None = None,
            environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for layer in (preset or {}, file_cfg or {}, env_overrides(environ), cli or {}):
        cfg = deep_merge(cfg, layer)
    validate(cfg)
    return cfg


@dataclass
class ExperimentConfig:
    kind: str
    values: dict
    out: Path
    plot: bool = False
    figure: str | None = None
    seed: int = 0
    threads: int = 1
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        validate(cfg)
        kind = cfg.get("kind", "ode")
        figure = cfg.get("figure")
        if kind == "reproduce" and figure not in FIGURES:
            raise ConfigError(f"reproduce needs a figure id out of {FIGURES}")
        return cls(kind, cfg, Path(cfg.get("out", "results")), bool(cfg.get("plot", False)), figure,
                   int(cfg.get("seed", 0)), int(cfg.get("threads", 1)))


# --- builders -----------------------------------------------------------------


def _as_config_error(fn):
    """Report invalid engine parameters as ConfigError."""

    @functools.wraps(fn)
    def wrapper(cfg):
        try:
            return fn(cfg)
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"{fn.__name__}: {exc}") from exc

    return wrapper


def build_quantizer(entry):
    if entry is None:
        return make_quantizer(None)
    return make_quantizer(entry["bits"], entry["omega"], entry.get("temperature", 0.0))


@_as_config_error
def build_model(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(build_quantizer(m.get("weight")), build_quantizer(m.get("input")),
                       float(m.get("ridge", 0.0)), float(m["eta"]))


@_as_config_error
def build_teacher(cfg: dict) -> TeacherSpec:
    t = cfg["teacher"]
    dist = TeacherDist(t.get("dist", "all_ones"), t.get("mean", 0.0), t.get("var", 1.0))
    return TeacherSpec(int(t["dim"]), float(t.get("rho", 1.0)), dist, float(t.get("noise_var", 0.0)))


@_as_config_error
def build_measure(cfg: dict) -> TeacherMeasure:
    t = cfg["teacher"]
    rho = float(t.get("rho", 1.0))
    kind = t.get("dist", "all_ones")
    if kind == "all_ones":
        return TeacherMeasure.point_mass(rho ** 0.5)
    if kind == "rademacher":
        a = rho ** 0.5
        return TeacherMeasure((-a, a), (0.5, 0.5))
    return TeacherMeasure.gaussian(rho, float(t.get("mean", 0.0)))


@_as_config_error
def build_sim(cfg: dict) -> SimConfig:
    s = cfg["simulation"]
    hr = s.get("hist_range")
    return SimConfig(build_model(cfg), build_teacher(cfg), float(s["horizon_tau"]), float(s["record_stride_tau"]),
                     s.get("init", "gaussian"), int(s["runs"]), int(cfg.get("seed", 0)),
                     tuple(float(x) for x in s.get("histogram_taus", ())), int(s.get("hist_bins", 101)),
                     tuple(hr) if hr else None, int(cfg.get("threads", 1)))


@_as_config_error
def build_ode(cfg: dict) -> OdeConfig:
    o = cfg["ode"]
    return OdeConfig(build_model(cfg), build_measure(cfg), float(cfg["teacher"].get("noise_var", 0.0)),
                     float(o["step_dtau"]), float(o["horizon_tau"]), float(o["record_stride_tau"]),
                     float(o.get("s_floor", 1e-10)), float(o.get("m0", 0.0)), float(o.get("q0", 1.0)))


@_as_config_error
def build_pde(cfg: dict) -> PdeConfig:
    p = cfg["pde"]
    meas = build_measure(cfg)
    return PdeConfig(build_model(cfg), tuple(meas.values), tuple(meas.weights),
                     float(cfg["teacher"].get("noise_var", 0.0)), float(p.get("drift_temperature", 0.0)),
                     p.get("dt"), 0.9, float(p["horizon_tau"]), tuple(float(x) for x in p["record_taus"]),
                     p.get("w_min"), p.get("w_max"), int(p["cells"]))
