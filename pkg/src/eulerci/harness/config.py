"""Run configuration: JSON schema, validation, hashing and object construction.

A run config is a JSON object::

    {
      "mode": "relaxed",                 # or "strict"
      "delta": [1.0, 0.25], "lambda": [6], "mu": [8],      # relaxed sequences
      "a": .., "b": .., "c": .., "eps": ..,                 # strict exponents
      "stages": 1,                        # Q
      "grid": 64,                         # output grid of every stage, or
      "grids": [64, 160],                 # one output grid per stage
      "window": [0.5, 0.5625],            # final sample interval
      "refine": 1,                        # spacing 1 / (8 refine max mu)
      "energy": [1.0],                    # trigonometric coefficients of e(t)
      "lambda_bar_sq": 5,
      "step": {...},                      # StepConfig overrides
      "snapshots": "all",                 # all | last | none
      "output": "runs/example"
    }

All randomness used by the harness is seeded from the SHA-256 hash of the
canonical (sorted-key, compact) JSON encoding of the config.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from ..iteration.energy import EnergyProfile
from ..iteration.schedule import ParamSchedule

SCHEMA_VERSION = 1

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "eulerci run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["mode", "stages", "energy"],
    "properties": {
        "mode": {"enum": ["strict", "relaxed"]},
        "a": _POSITIVE, "b": _POSITIVE, "c": _POSITIVE,
        "eps": {"type": "number", "minimum": 0},
        "delta": {"type": "array", "items": _POSITIVE, "minItems": 2},
        "lambda": {"type": "array", "items": _POS_INT},
        "mu": {"type": "array", "items": _POS_INT},
        "ell": {"type": "array", "items": _POSITIVE},
        "delta0": _POSITIVE,
        "lambda0": _POSITIVE,
        "beta": _POSITIVE,
        "stages": {"type": "integer", "minimum": 0},
        "grid": {"type": "integer", "minimum": 8},
        "grids": {"type": "array", "items": {"type": "integer", "minimum": 8}},
        "grid0": {"type": "integer", "minimum": 8},
        "window": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "refine": _POS_INT,
        "energy": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "lambda_bar_sq": {"type": "integer", "minimum": 1},
        "step": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_slow": {"type": ["integer", "null"], "minimum": 8},
                "flow_method": {"enum": ["eulerian", "characteristics"]},
                "alias_tol": _POSITIVE,
                "relaxed_floor": {"type": "boolean"},
                "doublesum": {"type": ["boolean", "null"]},
                "oscillation": {"type": "boolean"},
            },
        },
        "snapshots": {"enum": ["all", "last", "none"]},
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
    "allOf": [
        {"if": {"properties": {"mode": {"const": "strict"}}},
         "then": {"required": ["a", "b", "c", "eps"]}},
        {"if": {"properties": {"mode": {"const": "relaxed"}}},
         "then": {"required": ["delta", "lambda", "mu"]}},
    ],
}


class ConfigError(ValueError):
    """The configuration violates the schema or is internally inconsistent."""


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: Mapping) -> str:
    """SHA-256 hex digest of the canonical JSON encoding (``output`` excluded)."""
    body = {k: v for k, v in config.items() if k != "output"}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def seed_from_hash(digest: str) -> int:
    """Deterministic 63-bit seed from a hex digest."""
    return int(digest[:16], 16) & ((1 << 63) - 1)


@dataclass
class RunConfig:
    """A validated configuration and the objects built from it."""

    raw: dict
    schedule: ParamSchedule | None
    energy: EnergyProfile
    grids: list[int]
    window: tuple[float, float]

    @property
    def stages(self) -> int:
        return int(self.raw["stages"])

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"]) if "seed" in self.raw else seed_from_hash(self.hash)

    @property
    def refine(self) -> int:
        return int(self.raw.get("refine", 1))

    @property
    def lambda_bar_sq(self) -> int:
        return int(self.raw.get("lambda_bar_sq", 5))

    @property
    def step_options(self) -> dict:
        return dict(self.raw.get("step", {}))

    @property
    def grid0(self) -> int:
        if "grid0" in self.raw:
            return int(self.raw["grid0"])
        return max(16, self.grids[0] // 2) if self.grids else 16


def validate(config: Mapping) -> None:
    """Raise :class:`ConfigError` on schema violations."""
    try:
        jsonschema.validate(dict(config), CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def build(config: Mapping) -> RunConfig:
    """Validate ``config`` and construct schedule, energy profile and grids."""
    validate(config)
    raw = copy.deepcopy(dict(config))
    Q = int(raw["stages"])
    if "grids" in raw:
        grids = [int(n) for n in raw["grids"]]
        if len(grids) != Q:
            raise ConfigError(f"grids: {len(grids)} entries for {Q} stages")
    elif "grid" in raw:
        grids = [int(raw["grid"])] * Q
    elif Q == 0:
        grids = []
    else:
        raise ConfigError("<root>: 'grid' or 'grids' is required when stages > 0")
    window = tuple(float(x) for x in raw.get("window", [0.5, 0.5625]))
    if not window[0] <= window[1]:
        raise ConfigError("window: start exceeds end")
    try:
        energy = EnergyProfile.from_list(raw["energy"])
    except ValueError as exc:
        raise ConfigError(f"energy: {exc}") from None
    schedule = None
    if Q > 0:
        try:
            if raw["mode"] == "strict":
                schedule = ParamSchedule.strict(raw["a"], raw["b"], raw["c"], raw["eps"], Q)
            else:
                schedule = ParamSchedule.relaxed(
                    raw["delta"], raw["lambda"], raw["mu"], ell=raw.get("ell"),
                    delta0=raw.get("delta0"), lambda0=raw.get("lambda0"), beta=raw.get("beta"),
                    b=raw.get("b"), eps=raw.get("eps", 0.0))
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None
        if schedule.stages < Q:
            raise ConfigError(f"mu: {schedule.stages} values for {Q} stages")
    return RunConfig(raw, schedule, energy, grids, window)


def load(path: str | Path) -> RunConfig:
    """Read and build a JSON config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>: a JSON object is required")
    return build(raw)


__all__ = ["CONFIG_SCHEMA", "SCHEMA_VERSION", "ConfigError", "RunConfig", "build", "load",
           "validate", "config_hash", "seed_from_hash", "canonical_json"]
