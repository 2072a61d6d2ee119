"""Experiment configuration: JSON schema, validation and provenance hash."""
from __future__ import annotations

import copy
import hashlib
import json

import jsonschema

OPS = ("simulate", "survival", "pr-scan", "lambda-c", "fkg-check", "build-chain", "gap-scan",
       "recursion", "census", "diagram", "replay")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}

_EVENT = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["temporal", "spatial", "windowed", "mark_free", "chain"]},
        "rect": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
        "w": {"type": "integer", "minimum": 1},
        "site": _int,
        "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "j": {"type": "integer", "minimum": 0},
        "c": _num, "eps": _num, "L": {"type": "integer", "minimum": 0}, "T": _pos,
        "origin_time": _num, "x0": _int,
    },
}

SCHEMA = {
    "type": "object",
    "required": ["law"],
    "properties": {
        "op": {"enum": list(OPS)},
        "law": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["exponential", "shifted_pareto", "weibull", "uniform"]},
                "rate": _pos, "alpha": _pos, "scale": _pos, "shape": _pos, "b": _pos,
            },
            "additionalProperties": False,
        },
        "d": {"type": "integer", "minimum": 1},
        "box": {"oneOf": [
            {"type": "integer", "minimum": 0},
            {"type": "array", "items": _int, "minItems": 2, "maxItems": 2},
            {"type": "object", "required": ["lower", "upper"],
             "properties": {"lower": {"type": "array", "items": _int}, "upper": {"type": "array", "items": _int}}},
        ]},
        "horizon": {"oneOf": [_pos, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]},
        "lambda": {"oneOf": [_nonneg, {"type": "array", "items": _nonneg, "minItems": 1}]},
        "lambda_max": _nonneg,
        "scales": {
            "type": "object",
            "properties": {
                "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "r": {"type": "integer", "minimum": 0},
                "r_values": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "n_values": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "n": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 0},
                "c": _num, "eps": _pos, "m": {"type": "integer", "minimum": 0},
                "L": {"type": "integer", "minimum": 0}, "T": _pos,
            },
            "additionalProperties": False,
        },
        "n": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "out": {"type": "string"},
        "t_grid": {"type": "array", "items": _nonneg, "minItems": 1},
        "probes": {"type": "array", "items": _nonneg, "minItems": 1},
        "theta_lo": {"type": "number", "minimum": 0, "maximum": 1},
        "theta_hi": {"type": "number", "minimum": 0, "maximum": 1},
        "C": _pos,
        "start_policies": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["kind"],
            "properties": {"kind": {"enum": ["zero", "uniform", "explicit"]}, "width": _nonneg,
                           "offsets": {"type": "array", "items": _num}}}},
        "events": {"type": "object", "required": ["a", "b"], "properties": {"a": _EVENT, "b": _EVENT}},
        "system": {
            "type": "object",
            "required": ["marks", "arrows"],
            "properties": {
                "marks": {"type": "object", "additionalProperties": {"type": "array", "items": _num}},
                "arrows": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 4}},
            },
        },
        "seeds": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 3}},
        "origin": {"oneOf": [_int, {"type": "array", "items": _int}]},
        "dump": {"type": "string"},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


def validate(config: dict) -> dict:
    """Raise :class:`ConfigError` naming the offending field; return the config unchanged."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        e = errors[0]
        if e.validator == "required":
            missing = [r for r in e.validator_value if r not in e.instance]
            where = ".".join(map(str, e.path))
            field = f"{where}.{missing[0]}" if where else missing[0]
            raise ConfigError(f"config field '{field}': missing required field")
        if e.validator == "additionalProperties":
            where = ".".join(map(str, e.path)) or "<root>"
            raise ConfigError(f"config field '{where}': {e.message}")
        field = ".".join(map(str, e.path)) or "<root>"
        raise ConfigError(f"config field '{field}': {e.message}")
    th = (config.get("theta_lo", 0.01), config.get("theta_hi", 0.2))
    if not th[0] < th[1]:
        raise ConfigError("config field 'theta_lo': must be below theta_hi")
    return config


def load(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def canonical_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON, output location excluded."""
    c = copy.deepcopy(config)
    c.pop("out", None)
    return hashlib.sha256(canonical_json(c).encode()).hexdigest()[:16]


__all__ = ["SCHEMA", "OPS", "ConfigError", "validate", "load", "config_hash", "canonical_json"]
