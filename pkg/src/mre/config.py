"""Experiment configuration: JSON schema, validation, defaults.

Configs are plain JSON documents. Validation is strict (unknown keys are
rejected) and every pipeline run writes back the fully-resolved document
so artifacts are reproducible from the snapshot alone.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}

_GEOMETRY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["length", "width", "height", "youngs_modulus",
                 "poisson_ratio", "density"],
    "properties": {
        "length": _POS,
        "width": _POS,
        "height": _POS,
        "youngs_modulus": _POS,
        "poisson_ratio": {"type": "number", "minimum": 0,
                          "exclusiveMaximum": 0.5},
        "density": _POS,
        "shear_correction": _POS,
        "damping_w": {"type": "number", "minimum": 0},
        "damping_beta": {"type": "number", "minimum": 0},
    },
}

_BC = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["simply_supported", "rotary_spring"]},
        "rotary_stiffness": _POS,
    },
}

_DAMPING = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["none", "rayleigh", "modal"]},
        "zeta_i": _POS,
        "mode_i": _INT_POS,
        "zeta_j": _POS,
        "mode_j": _INT_POS,
        "ratios": {"type": "array", "items": _POS, "minItems": 1},
        "ratio": _POS,
    },
}

_NONLINEARITY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["none", "cubic-stiffness"]},
        "kappa3": {"type": "number", "minimum": 0},
    },
}

_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["euler_bernoulli_beam", "timoshenko_beam",
                          "shear_building"]},
        "geometry": _GEOMETRY,
        "n_elements": {"type": "integer", "minimum": 4},
        "bc": _BC,
        "damping": _DAMPING,
        "nonlinearity": _NONLINEARITY,
        "n_stories": _INT_POS,
        "story_mass": {"anyOf": [_POS, {"type": "array", "items": _POS}]},
        "story_stiffness": {"anyOf": [_POS, {"type": "array", "items": _POS}]},
        "damage_story": _INT_POS,
        "damage_fraction": {"type": "number", "minimum": 0,
                            "exclusiveMaximum": 1},
    },
}

_LOAD = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "x"],
    "properties": {
        "kind": {"enum": ["sine", "bandlimited"]},
        "x": _NUM,
        "amplitude": _NUM,
        "omega": _POS,
        "phase": _NUM,
        "scale": _POS,
        "band": {"type": "array", "items": {"type": "number", "minimum": 0},
                 "minItems": 2, "maxItems": 2},
    },
}

_EXCITATION = {
    "type": "object",
    "additionalProperties": False,
    "required": ["duration", "dt", "loads"],
    "properties": {
        "duration": _POS,
        "dt": _POS,
        "loads": {"type": "array", "items": _LOAD, "minItems": 1},
    },
}

_PRIOR = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mean", "variance", "dof"],
    "properties": {"mean": _POS, "variance": _POS, "dof": _POS},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "excitation", "sensors"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["truth", "nominal"],
            "properties": {"truth": _MODEL, "nominal": _MODEL},
        },
        "excitation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["train", "test"],
            "properties": {"train": _EXCITATION, "test": _EXCITATION},
        },
        "sensors": {
            "type": "object",
            "additionalProperties": False,
            "required": ["coordinates"],
            "properties": {
                "coordinates": {"type": "array", "items": _NUM, "minItems": 1},
                "noise_pct": {
                    "anyOf": [
                        {"type": "number", "minimum": 0},
                        {"type": "array", "minItems": 1,
                         "items": {"type": "number", "minimum": 0}},
                    ]
                },
            },
        },
        "modal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "m": {"anyOf": [{"type": "integer", "minimum": 1},
                                {"const": "auto"}]},
                "floor_db": _NUM,
                "default_ratio": _POS,
            },
        },
        "gp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kernel": {"enum": ["matern12"]},
                "jitter": _POS,
                "noise_floor_pct": {"type": "number", "minimum": 0},
                "sigma_q0": _POS,
                "priors": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"alpha": _PRIOR, "ell": _PRIOR},
                },
                "optimizer": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "starts": _INT_POS,
                        "maxfev": _INT_POS,
                        "refine_gradient": {"type": "boolean"},
                    },
                },
                "debug_dump": {"type": "boolean"},
            },
        },
        "surrogate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"anyOf": [{"type": "integer", "minimum": 1},
                                     {"const": "auto"}]},
                "hidden_candidates": {"type": "array", "items": _INT_POS,
                                      "minItems": 1},
                "learning_rate": _POS,
                "beta1": _POS,
                "beta2": _POS,
                "eps_adam": _POS,
                "l2_weight": {"type": "number", "minimum": 0},
                "max_epochs": _INT_POS,
                "batch_size": _INT_POS,
                "val_fraction": {"type": "number", "exclusiveMinimum": 0,
                                 "maximum": 0.5},
                "patience": _INT_POS,
                "cv_folds": {"type": "integer", "minimum": 2},
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"substeps": _INT_POS},
        },
        "predict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"store_all_dofs": {"type": "boolean"}},
        },
        "mesh_transfer": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_elements"],
            "properties": {"n_elements": {"type": "integer", "minimum": 4}},
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "sensors": {"noise_pct": [0.0]},
    "modal": {"m": "auto", "floor_db": 10.0, "default_ratio": 0.02},
    "gp": {
        "kernel": "matern12",
        "jitter": 1e-12,
        "noise_floor_pct": 0.05,
        "sigma_q0": 1e-3,
        "priors": {
            "alpha": {"mean": 1e4, "variance": 1e2, "dof": 1},
            "ell": {"mean": 0.1, "variance": 1e-2, "dof": 1},
        },
        "optimizer": {"starts": 5, "maxfev": 600, "refine_gradient": False},
        "debug_dump": False,
    },
    "surrogate": {
        "hidden": "auto",
        "hidden_candidates": [20, 50, 100],
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_adam": 1e-8,
        "l2_weight": 1e-6,
        "max_epochs": 5000,
        "batch_size": 128,
        "val_fraction": 0.2,
        "patience": 50,
        "cv_folds": 5,
    },
    "integrator": {"substeps": 10},
    "predict": {"store_all_dofs": True},
}


def _merge_defaults(cfg: dict, defaults: dict) -> dict:
    out = copy.deepcopy(cfg)
    for key, val in defaults.items():
        if key not in out:
            out[key] = copy.deepcopy(val)
        elif isinstance(val, dict) and isinstance(out[key], dict):
            out[key] = _merge_defaults(out[key], val)
    return out


def validate_config(cfg: dict) -> dict:
    """Schema-check, apply defaults, and normalize; returns the resolved doc."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as ex:
        path = "/".join(str(p) for p in ex.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {ex.message}") from ex
    resolved = _merge_defaults(cfg, DEFAULTS)
    noise = resolved["sensors"]["noise_pct"]
    if not isinstance(noise, list):
        resolved["sensors"]["noise_pct"] = [noise]
    _validate_model_details(resolved["model"]["truth"], "model/truth")
    _validate_model_details(resolved["model"]["nominal"], "model/nominal")
    for stage in ("train", "test"):
        _validate_excitation(resolved["excitation"][stage],
                             f"excitation/{stage}")
    if resolved["model"]["nominal"].get("nonlinearity", {}).get("kind",
                                                                "none") != "none":
        raise ConfigError("nominal model must stay linear")
    return resolved


def _validate_model_details(model: dict, where: str) -> None:
    kind = model["kind"]
    if kind in ("euler_bernoulli_beam", "timoshenko_beam"):
        for req in ("geometry", "n_elements"):
            if req not in model:
                raise ConfigError(f"{where}: beam models need {req!r}")
        bc = model.get("bc", {"kind": "simply_supported"})
        if bc["kind"] == "rotary_spring" and "rotary_stiffness" not in bc:
            raise ConfigError(f"{where}: rotary_spring bc needs rotary_stiffness")
    else:
        for req in ("n_stories", "story_mass", "story_stiffness"):
            if req not in model:
                raise ConfigError(f"{where}: shear buildings need {req!r}")
    damping = model.get("damping", {"kind": "none"})
    if damping["kind"] == "rayleigh":
        if not {"zeta_i", "mode_i", "zeta_j", "mode_j"} <= damping.keys():
            raise ConfigError(
                f"{where}: rayleigh damping needs zeta_i/mode_i/zeta_j/mode_j")
        if damping["mode_i"] == damping["mode_j"]:
            raise ConfigError(f"{where}: rayleigh target modes must differ")
    if damping["kind"] == "modal":
        if "ratios" not in damping and "ratio" not in damping:
            raise ConfigError(f"{where}: modal damping needs ratios or ratio")


def _validate_excitation(exc: dict, where: str) -> None:
    steps = exc["duration"] / exc["dt"]
    if abs(steps - round(steps)) > 1e-9:
        raise ConfigError(f"{where}: duration must be a multiple of dt")
    for i, load in enumerate(exc["loads"]):
        if load["kind"] == "sine":
            if "amplitude" not in load or "omega" not in load:
                raise ConfigError(
                    f"{where}/loads/{i}: sine loads need amplitude and omega")
        else:
            if "scale" not in load or "band" not in load:
                raise ConfigError(
                    f"{where}/loads/{i}: bandlimited loads need scale and band")


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as ex:
        raise ConfigError(f"{path}:{ex.lineno}:{ex.colno}: {ex.msg}") from ex
    return validate_config(raw)
