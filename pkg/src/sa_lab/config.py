"""Experiment configuration: JSON schema, overrides, hashing."""
import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema

from .errors import ConfigError

MIN_ENSEMBLE = 100
EXPERIMENTS = ("last_iterate_rate", "pr_average_rate", "coupling_rate",
               "confidence_intervals", "lsa_tail_transition", "sgd_markov",
               "recursion_lemma", "covariance_rate", "simulate")

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_int_list = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "seed"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["linear", "multiplicative", "quadratic", "tanh"]},
                "A": {}, "b": {}, "c": {"type": "number"}, "H": {},
                "centers": {}, "mu": {"type": "number"},
            },
        },
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["single", "iid", "markov"]},
                "probs": _vector, "transition": _matrix, "initial": _vector,
            },
        },
        "mds": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "covariance"],
            "properties": {
                "kind": {"enum": ["gaussian_iid", "bounded_iid", "scaled_student_t"]},
                "covariance": _matrix,
                "moment_order": {"type": "integer", "minimum": 1},
                "dof": {"type": "number"},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["gamma1", "a"],
            "properties": {"gamma1": {"type": "number", "exclusiveMinimum": 0},
                           "a": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        },
        "horizon": {"type": "integer", "minimum": 2},
        "checkpoints": _int_list,
        "ensemble": {"type": "integer", "minimum": 1},
        "x1": _vector,
        "burn_in": {"type": "integer", "minimum": 0},
        "partition_c": {"type": "number", "exclusiveMinimum": 0},
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p": {"type": "array", "items": {"type": "number", "minimum": 1}},
                "method": {"enum": ["exact_1d", "exact_assignment", "sliced"]},
                "bootstrap": {"type": "integer", "minimum": 2},
                "n_directions": {"type": "integer", "minimum": 1},
                "baseline": {"enum": ["quadrature", "linear"]},
                "baseline_replicates": {"type": "integer", "minimum": 1},
                "reference": {"enum": ["quantile", "sampled"]},
            },
        },
        "ci": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "deltas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                       "exclusiveMaximum": 1}},
                "p": {"type": "number", "minimum": 1},
                "calibration_ensemble": {"type": "integer", "minimum": 2},
                "gaussian_draws": {"type": "integer", "minimum": 2},
                "early_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "coupling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "A": _matrix, "Gamma": _matrix,
                "horizon_time": {"type": "number", "exclusiveMinimum": 0},
                "steps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "recursion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"lambda": {"type": "number"}, "b": {"type": "number"}},
        },
        "sgd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"mu_lower": {"type": "number"}},
        },
        "output_dir": {"type": "string"},
    },
}

REQUIRED_FOR = {
    "last_iterate_rate": ("problem", "chain", "mds", "schedule", "horizon", "checkpoints",
                          "ensemble"),
    "pr_average_rate": ("problem", "chain", "mds", "schedule", "horizon", "checkpoints",
                        "ensemble"),
    "confidence_intervals": ("problem", "chain", "mds", "schedule", "horizon",
                             "checkpoints", "ensemble", "ci"),
    "lsa_tail_transition": ("problem", "chain", "mds", "schedule", "horizon",
                            "checkpoints", "ensemble"),
    "sgd_markov": ("problem", "chain", "mds", "schedule", "horizon", "checkpoints",
                   "ensemble"),
    "covariance_rate": ("problem", "chain", "mds", "schedule", "horizon", "checkpoints",
                        "ensemble"),
    "simulate": ("problem", "chain", "mds", "schedule", "horizon", "checkpoints",
                 "ensemble"),
    "coupling_rate": ("coupling", "ensemble"),
    "recursion_lemma": ("schedule", "horizon", "recursion"),
}


def _validate(raw, path):
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        key = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(exc.message, key=key, path=path) from None
    for key in REQUIRED_FOR[raw["experiment"]]:
        if key not in raw:
            raise ConfigError(f"missing required section for {raw['experiment']}",
                              key=key, path=path)
    ens = raw.get("ensemble")
    if ens is not None and ens < MIN_ENSEMBLE:
        raise ConfigError(f"ensemble below minimum ({ens} < {MIN_ENSEMBLE})",
                          key="ensemble", path=path)
    if "checkpoints" in raw and "horizon" in raw and max(raw["checkpoints"]) > raw["horizon"]:
        raise ConfigError("checkpoint beyond horizon", key="checkpoints", path=path)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, overrides, path=None):
    """Apply ``dotted.key=value`` strings; the key must already be valid for the schema."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", key=item, path=path)
        key, text = item.split("=", 1)
        parts = key.split(".")
        node, schema = out, SCHEMA
        for i, part in enumerate(parts):
            props = schema.get("properties", {})
            if part not in props:
                raise ConfigError("unknown override key", key=key, path=path)
            schema = props[part]
            if i == len(parts) - 1:
                node[part] = _parse_value(text)
            else:
                node = node.setdefault(part, {})
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    path: str = None

    def __getitem__(self, key):
        return self.raw[key]

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def experiment(self):
        return self.raw["experiment"]

    @property
    def seed(self):
        return int(self.raw["seed"])

    def section(self, key):
        return self.raw.get(key, {})

    def config_hash(self):
        body = {k: v for k, v in self.raw.items() if k != "output_dir"}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(source, overrides=None, seed=None, output_dir=None):
    """Load, validate, override and revalidate a config (path or dict)."""
    path = None
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        path = str(source)
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config file not found", path=path) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} at line {exc.lineno}", path=path) from None
    _validate(raw, path)
    raw = apply_overrides(raw, overrides, path)
    if seed is not None:
        raw["seed"] = int(seed)
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    _validate(raw, path)
    return ExperimentConfig(raw=raw, path=path)
