"""Scenario documents: YAML parsing, strict schema validation and overrides.

Errors carry the line and column of the offending node and, for bounded
fields, the admissible range.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .lattice import operator_from_config

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    """Invalid scenario; ``str()`` names the field, the bound and the location."""

    def __init__(self, message: str, path=(), line: int | None = None, column: int | None = None):
        self.path = tuple(path)
        self.line = line
        self.column = column
        loc = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{loc}{message}")


def _num(desc, **kw):
    return {"type": "number", "description": desc, **kw}


def _int(desc, **kw):
    return {"type": "integer", "description": desc, **kw}


def _grid(min_points: int, desc: str):
    return {
        "description": desc,
        "oneOf": [
            {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": min_points,
             "description": desc},
            {
                "type": "object",
                "additionalProperties": False,
                "required": ["min", "max", "points"],
                "properties": {
                    "min": _num("grid start > 0", exclusiveMinimum=0),
                    "max": _num("grid end > 0", exclusiveMinimum=0),
                    "points": _int(desc, minimum=min_points),
                    "spacing": {"enum": ["geometric", "linear"]},
                },
            },
        ],
    }


_T_GRID = _grid(5, "T_grid needs >= 5 points")
_DELTA = _num("0 < delta < 1", exclusiveMinimum=0, exclusiveMaximum=1)
_ETA = _num("eta > 0", exclusiveMinimum=0)
_P_LIST = {"type": "array", "items": _num("p > 0", exclusiveMinimum=0), "minItems": 1,
           "description": "moment orders p > 0"}
_STATE = {
    "description": "initial state",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "delta": _int("site of a unit vector"),
        "amplitudes": {"type": "object", "minProperties": 1,
                       "additionalProperties": {"oneOf": [{"type": "number"},
                                                          {"type": "array", "items": {"type": "number"},
                                                           "minItems": 2, "maxItems": 2}]}},
    },
}
_RANGE = {
    "type": "object", "additionalProperties": False, "required": ["min", "max"],
    "properties": {"min": _int("range start"), "max": _int("range end"), "step": _int("step >= 1", minimum=1)},
}
_ENERGIES = {
    "description": "energy grid",
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {"type": "object", "additionalProperties": False, "required": ["points"],
         "properties": {"min": {"type": "number"}, "max": {"type": "number"},
                        "points": _int("energy grid needs >= 1 point", minimum=1)}},
    ],
}

_COMMON = {"type": {"type": "string"}, "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}}


def _exp(kind, props, required=()):
    return {
        "if": {"properties": {"type": {"const": kind}}},
        "then": {"type": "object", "additionalProperties": False, "required": ["type", *required],
                 "properties": {**_COMMON, **props}},
    }


EXPERIMENT_TYPES = {
    "exponent_sweep": ({"p": _P_LIST, "T_grid": _T_GRID, "state": _STATE,
                        "window_radius": _int("window_radius >= 1", minimum=1),
                        "beta_max": _num("beta_max"), "beta_min": _num("beta_min")}, ["p", "T_grid"]),
    "ballistic_check": ({"p": _P_LIST, "T_grid": _T_GRID, "state": _STATE,
                         "window_radius": _int("window_radius >= 1", minimum=1),
                         "tol": _num("tol >= 0", minimum=0)}, ["p", "T_grid"]),
    "beta_monotonicity": ({"p": {**_P_LIST, "minItems": 3, "description": "needs >= 3 values of p"},
                           "T_grid": _T_GRID, "state": _STATE,
                           "window_radius": _int("window_radius >= 1", minimum=1)}, ["p", "T_grid"]),
    "good_box_scan": ({"N": _int("N >= 8", minimum=8), "delta": _DELTA, "ell": _int("ell >= 1", minimum=1),
                       "eta": _ETA, "energies": _ENERGIES,
                       "min_pass_fraction": _num("0 <= min_pass_fraction <= 1", minimum=0, maximum=1)},
                      ["N", "delta", "eta"]),
    "bad_box_count": ({"N": _int("N >= 8", minimum=8), "delta": _DELTA, "ell": _int("ell >= 1", minimum=1),
                       "eta": _ETA, "energies": _ENERGIES,
                       "delta0": _num("0 < delta0 < 1", exclusiveMinimum=0, exclusiveMaximum=1)},
                      ["N", "delta", "eta"]),
    "barrier_chain": ({"ell": {"type": "array", "items": _int("ell >= 2", minimum=2), "minItems": 2,
                               "description": "needs >= 2 box half-widths"},
                       "E": {"type": "number"}, "eta": _ETA, "K1": _int("K1 >= 0", minimum=0),
                       "delta": _DELTA,
                       "constants": {"type": "object", "additionalProperties": False,
                                     "properties": {"C": _num("C > 0", exclusiveMinimum=0),
                                                    "c_rate": _num("c_rate > 0", exclusiveMinimum=0),
                                                    "c_pow": _num("0 < c_pow <= 1", exclusiveMinimum=0,
                                                                  maximum=1)}}},
                      ["ell", "eta"]),
    "parseval_audit": ({"trials": _int("trials >= 1", minimum=1), "K1": _int("K1 >= 0", minimum=0),
                        "n_max": _int("n_max >= 0", minimum=0),
                        "T_range": {"type": "array", "items": _num("T > 0", exclusiveMinimum=0),
                                    "minItems": 2, "maxItems": 2},
                        "window_radius": _int("window_radius >= 1", minimum=1),
                        "tol": _num("tol > 0", exclusiveMinimum=0)}, []),
    "correlator_decay": ({"j": {"type": "integer"}, "T": _num("T > 0", exclusiveMinimum=0), "n_range": _RANGE,
                          "c_pow": {"type": "array", "items": _num("0 < c_pow <= 1", exclusiveMinimum=0,
                                                                   maximum=1), "minItems": 1},
                          "fit_tol": _num("fit_tol > 0", exclusiveMinimum=0),
                          "min_decay": _num("min_decay >= 0", minimum=0)}, ["T", "n_range"]),
    "combes_thomas": ({"E": {"type": "number"}, "eta": _ETA, "j": {"type": "integer"}, "n_range": _RANGE,
                       "c_CT": _num("c_CT > 0", exclusiveMinimum=0)}, ["eta", "n_range"]),
    "commutator_audit": ({"trials": _int("trials >= 1", minimum=1),
                          "p_max": _int("1 <= p_max <= 8", minimum=1, maximum=8),
                          "window": _int("window >= 16", minimum=16),
                          "tol": _num("tol > 0", exclusiveMinimum=0)}, []),
    "heisenberg_growth": ({"N": _int("N >= 1", minimum=1), "state": _STATE,
                           "gamma": {"type": "object", "additionalProperties": False,
                                     "properties": {"type": {"enum": ["delta", "exp"]},
                                                    "C": _num("C > 0", exclusiveMinimum=0),
                                                    "c": _num("c > 0", exclusiveMinimum=0),
                                                    "radius": _int("radius >= 0", minimum=0)}},
                           "t_grid": _grid(2, "t_grid needs >= 2 points")}, ["N", "t_grid"]),
}

_KERNEL = {
    "type": "object",
    "required": ["type"],
    "properties": {"type": {"enum": ["exp", "nn", "table", "zero"]}},
    "allOf": [
        {"if": {"properties": {"type": {"const": "exp"}}},
         "then": {"additionalProperties": False,
                  "properties": {"type": {}, "A1": _num("A1 > 0", exclusiveMinimum=0),
                                 "a": _num("a > 0", exclusiveMinimum=0),
                                 "radius": _int("radius >= 0", minimum=0),
                                 "tail_tol": _num("tail_tol > 0", exclusiveMinimum=0)}}},
        {"if": {"properties": {"type": {"const": "nn"}}},
         "then": {"additionalProperties": False, "properties": {"type": {}, "t": {"type": "number"}}}},
        {"if": {"properties": {"type": {"const": "table"}}},
         "then": {"additionalProperties": False, "required": ["table", "A1", "a"],
                  "properties": {"type": {}, "table": {"type": "object", "minProperties": 1},
                                 "A1": _num("A1 > 0", exclusiveMinimum=0),
                                 "a": _num("a > 0", exclusiveMinimum=0)}}},
        {"if": {"properties": {"type": {"const": "zero"}}},
         "then": {"additionalProperties": False, "properties": {"type": {}}}},
    ],
}

_POTENTIAL = {
    "type": "object",
    "required": ["type"],
    "properties": {"type": {"enum": ["quasiperiodic", "table", "constant", "zero"]}},
    "allOf": [
        {"if": {"properties": {"type": {"const": "quasiperiodic"}}},
         "then": {"additionalProperties": False,
                  "properties": {"type": {},
                                 "fourier_coeffs": {"type": "object", "additionalProperties": False,
                                                    "properties": {"cos": {"type": "array",
                                                                           "items": {"type": "number"}},
                                                                   "sin": {"type": "array",
                                                                           "items": {"type": "number"}}}},
                                 "theta": _num("0 <= theta < 1", minimum=0, exclusiveMaximum=1),
                                 "alpha": _num("0 < alpha < 1", exclusiveMinimum=0, exclusiveMaximum=1)}}},
        {"if": {"properties": {"type": {"const": "table"}}},
         "then": {"additionalProperties": False, "required": ["table"],
                  "properties": {"type": {},
                                 "table": {"type": "object", "additionalProperties": False, "required": ["values"],
                                           "properties": {"lo": {"type": "integer"},
                                                          "values": {"type": "array", "minItems": 1,
                                                                     "items": {"type": "number"}}}}}}},
        {"if": {"properties": {"type": {"const": "constant"}}},
         "then": {"additionalProperties": False, "properties": {"type": {}, "value": {"type": "number"}}}},
        {"if": {"properties": {"type": {"const": "zero"}}},
         "then": {"additionalProperties": False, "properties": {"type": {}}}},
    ],
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "operator", "experiments"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "seed": _int("seed >= 0", minimum=0),
        "output": {"type": "string"},
        "operator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kernel"],
            "properties": {"kernel": _KERNEL, "potential": _POTENTIAL, "coupling": {"type": "number"}},
        },
        "experiments": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["type"],
                "properties": {"type": {"enum": sorted(EXPERIMENT_TYPES)}},
                "allOf": [_exp(k, props, req) for k, (props, req) in EXPERIMENT_TYPES.items()],
            },
        },
    },
}


# --------------------------------------------------------------------------- locations


def _node_at(node, path):
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode):
            if not isinstance(key, int) or key >= len(node.value):
                return node
            node = node.value[key]
        else:
            return node
    return node


def _key_node(node, path):
    """Key node of the last path element (points at the offending name for unknown keys)."""
    parent = _node_at(node, path[:-1]) if path else node
    if path and isinstance(parent, yaml.MappingNode):
        for k, _v in parent.value:
            if k.value == str(path[-1]):
                return k
    return _node_at(node, path)


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _best_error(errors):
    # prefer the deepest error; descend into oneOf/anyOf/if-then contexts
    def depth(e):
        return len(e.absolute_path)

    flat = []
    stack = list(errors)
    while stack:
        e = stack.pop()
        if e.context:
            stack.extend(e.context)
        flat.append(e)
    # a type mismatch usually means the other oneOf branch was intended
    return max(flat, key=lambda e: (depth(e), e.validator not in ("oneOf", "anyOf", "if"), e.validator != "type"))


def _describe(err) -> str:
    path = list(err.absolute_path)
    field = _dotted(path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return f"unknown key(s) {extra} in {field}"
    bound = err.schema.get("description")
    if err.validator in ("minimum", "maximum", "exclusiveMinimum", "exclusiveMaximum"):
        return f"{field} = {err.instance!r} out of range (require {bound or err.message})"
    if err.validator in ("minItems", "maxItems"):
        return f"{field} has {len(err.instance)} entries ({bound or err.message})"
    if err.validator == "oneOf":
        sub = err.schema.get("description")
        return f"{field} is invalid" + (f" ({sub})" if sub else "") + f": {err.message}"
    return f"{field}: {err.message}" + (f" ({bound})" if bound else "")


# --------------------------------------------------------------------------- loading


def parse_overrides(items) -> list:
    """``["a.b=1", "experiments.0.eta=0.1"]`` -> ``[(path, value)]`` with YAML-typed values."""
    out = []
    for item in items or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        path = [int(p) if p.lstrip("-").isdigit() else p for p in key.strip().split(".")]
        out.append((path, yaml.safe_load(raw)))
    return out


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for path, value in overrides:
        cur = doc
        for k in path[:-1]:
            try:
                cur = cur[k]
            except (KeyError, IndexError, TypeError):
                raise ScenarioError(f"override path {_dotted(path)} does not exist") from None
        last = path[-1]
        if isinstance(cur, list):
            if not isinstance(last, int) or last >= len(cur):
                raise ScenarioError(f"override path {_dotted(path)} does not exist")
        elif not isinstance(cur, dict):
            raise ScenarioError(f"override path {_dotted(path)} does not exist")
        cur[last] = value
    return doc


def _semantic_checks(doc):
    """Constraints the schema cannot express; yields ``(path, message)``."""
    for i, ex in enumerate(doc.get("experiments", [])):
        for key in ("T_grid", "t_grid"):
            g = ex.get(key)
            if isinstance(g, dict) and g["max"] < g["min"]:
                yield ["experiments", i, key], f"experiments[{i}].{key}: max < min"
        rng = ex.get("n_range")
        if isinstance(rng, dict) and rng["max"] < rng["min"]:
            yield ["experiments", i, "n_range"], f"experiments[{i}].n_range: max < min"
        if ex.get("type") in ("good_box_scan", "bad_box_count") and "ell" in ex:
            N, ell, d = ex["N"], ex["ell"], ex["delta"]
            if N < 8 * ell:
                yield ["experiments", i, "ell"], f"experiments[{i}].ell = {ell}: need N >= 8*ell"
            elif 2 * ell + 1 < N**d:
                yield ["experiments", i, "ell"], f"experiments[{i}].ell = {ell}: need 2*ell+1 >= N^delta"
        names = [e.get("name", e["type"]) for e in doc.get("experiments", []) if isinstance(e, dict)]
        if len(set(names)) != len(names) and i == 0:
            yield ["experiments"], "experiment names must be unique (set 'name' on repeated types)"


def validate_document(doc, root_node=None) -> dict:
    """Schema and semantic validation; raises :class:`ScenarioError`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = list(validator.iter_errors(doc))
    if errors:
        err = _best_error(errors)
        path = list(err.absolute_path)
        line = col = None
        if root_node is not None:
            node = _key_node(root_node, path) if err.validator != "additionalProperties" else _extra_key_node(
                root_node, path, err)
            line, col = node.start_mark.line + 1, node.start_mark.column + 1
        raise ScenarioError(_describe(err), path, line, col)
    for path, msg in _semantic_checks(doc):
        line = col = None
        if root_node is not None:
            node = _key_node(root_node, path)
            line, col = node.start_mark.line + 1, node.start_mark.column + 1
        raise ScenarioError(msg, path, line, col)
    try:
        operator_from_config(doc["operator"])
    except (ValueError, KeyError) as e:
        node = _key_node(root_node, ["operator"]) if root_node is not None else None
        raise ScenarioError(f"operator: {e}", ["operator"],
                            node.start_mark.line + 1 if node else None,
                            node.start_mark.column + 1 if node else None) from None
    return doc


def _extra_key_node(root, path, err):
    extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
    return _key_node(root, [*path, extra[0]]) if extra else _node_at(root, path)


def load_text(text: str, overrides=()) -> dict:
    """Parse and validate a scenario given as YAML text."""
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        m = e.problem_mark
        raise ScenarioError(f"YAML syntax: {e.problem}", (), m.line + 1 if m else None,
                            m.column + 1 if m else None) from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping", (), 1, 1)
    if overrides:
        doc = apply_overrides(doc, parse_overrides(overrides) if isinstance(overrides[0], str) else overrides)
        root = yaml.compose(yaml.safe_dump(doc, sort_keys=False))
    return validate_document(doc, root)


def resolve_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = SCENARIO_DIR / f"{name_or_path}.yaml"
    if cand.exists():
        return cand
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")


def load_scenario(name_or_path, overrides=()) -> dict:
    return load_text(resolve_path(name_or_path).read_text(encoding="utf-8"), list(overrides))


def bundled_scenarios() -> dict:
    """``{name: description}`` of the scenarios shipped with the package."""
    out = {}
    for f in sorted(SCENARIO_DIR.glob("*.yaml")):
        doc = yaml.safe_load(f.read_text(encoding="utf-8"))
        out[f.stem] = doc.get("description", "")
    return out


def scenario_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def grid(spec, default_spacing="geometric"):
    """Expand a grid spec (explicit list or ``{min, max, points[, spacing]}``)."""
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if spec.get("spacing", default_spacing) == "geometric":
        return np.geomspace(spec["min"], spec["max"], spec["points"])
    return np.linspace(spec["min"], spec["max"], spec["points"])
