"""Run configuration: JSON layout, schema, defaults and conversion to typed objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import jsonschema

from .exceptions import ConfigError, HypothesisError, SpecStructureError
from .lattice import FULL_TREE, RECOMBINING, Lattice, build_lattice
from .model import (
    GeneralCosts,
    GeneratorSpec,
    GridSpec,
    LinearCosts,
    ProblemSpec,
    ScalarField,
    TimeFunction,
    ValidationReport,
    validate_hypotheses,
)
from .solvers import BACKENDS, SolverOptions

TASKS = ("solve", "residuals", "verify_representation", "penalty_sweep", "picard_trace")
FORMATS = ("csv", "json")

_NUM = {"type": "number"}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUM}}

_FIELD = {
    "oneOf": [
        _NUM,
        {"type": "object", "additionalProperties": False, "required": ["kind", "value"],
         "properties": {"kind": {"const": "constant"}, "value": _NUM}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "alpha", "beta"],
         "properties": {"kind": {"const": "affine"}, "alpha": _NUM, "beta": _NUM}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "alpha", "beta", "cap"],
         "properties": {"kind": {"const": "clipped_affine"}, "alpha": _NUM, "beta": _NUM, "cap": _NUM}},
    ]
}

_INTERCEPT = {
    "oneOf": [
        _NUM,
        {"type": "object", "additionalProperties": False, "required": ["kind", "breaks", "values"],
         "properties": {"kind": {"const": "piecewise_constant"},
                        "breaks": {"type": "array", "items": _NUM},
                        "values": {"type": "array", "items": _NUM, "minItems": 1}}},
    ]
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "lattice", "tasks"],
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mode_count", "horizon", "generator", "costs", "upper_barriers", "terminals"],
            "properties": {
                "mode_count": {"type": "integer", "minimum": 1},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "generator": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["intercepts"],
                    "properties": {
                        "intercepts": {"type": "array", "items": _INTERCEPT},
                        "y_coefs": {"type": "array", "items": _NUM},
                        "z_coefs": {"type": "array", "items": _NUM},
                    },
                },
                "costs": {
                    "oneOf": [
                        {"type": "object", "additionalProperties": False, "required": ["kind", "k"],
                         "properties": {"kind": {"const": "linear"}, "k": _MATRIX}},
                        {"type": "object", "additionalProperties": False, "required": ["kind", "slope", "offset"],
                         "properties": {"kind": {"const": "affine"}, "slope": _MATRIX, "offset": _MATRIX}},
                    ]
                },
                "upper_barriers": {"type": "array", "items": _FIELD},
                "terminals": {"type": "array", "items": _FIELD},
                "allow_nonstrict_costs": {"type": "boolean"},
                "sample_grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_times": {"type": "integer", "minimum": 2},
                        "n_points": {"type": "integer", "minimum": 2},
                        "lower": _NUM,
                        "upper": _NUM,
                    },
                },
            },
        },
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "kind": {"enum": [RECOMBINING, FULL_TREE]},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "backend": {"enum": list(BACKENDS)},
                "tol_projection": {"type": "number", "exclusiveMinimum": 0},
                "max_projection_sweeps": {"type": ["integer", "null"], "minimum": 1},
                "tol_driver_fixpoint": {"type": "number", "exclusiveMinimum": 0},
                "n_pen": {"type": ["number", "null"], "minimum": 0},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
                "picard_max_iters": {"type": "integer", "minimum": 1},
                "monotonicity_tol": {"type": "number", "exclusiveMinimum": 0},
                "n_pen_sweep": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "sweep_backend": {"enum": ["penalty_upper", "penalty_oblique"]},
                "verify_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "tasks": {"type": "array", "items": {"enum": list(TASKS)}, "uniqueItems": True},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "formats": {"type": "array", "items": {"enum": list(FORMATS)}, "uniqueItems": True},
            },
        },
    },
}

_SOLVER_DEFAULTS = {
    "backend": "direct",
    "tol_projection": 1e-12,
    "max_projection_sweeps": None,
    "tol_driver_fixpoint": 1e-13,
    "n_pen": None,
    "picard_tol": 1e-10,
    "picard_max_iters": 50,
    "monotonicity_tol": 1e-12,
    "n_pen_sweep": [],
    "verify_tol": 1e-10,
}
_OPTION_KEYS = ("tol_projection", "max_projection_sweeps", "tol_driver_fixpoint", "n_pen",
                "picard_tol", "picard_max_iters", "monotonicity_tol")


@dataclass
class RunConfig:
    spec: ProblemSpec
    lattice: Lattice
    backend: str
    options: SolverOptions
    tasks: tuple
    output_dir: str
    formats: tuple
    n_pen_sweep: tuple = ()
    sweep_backend: str = "penalty_upper"
    verify_tol: float = 1e-10
    validation: ValidationReport | None = None
    raw: dict = field(default_factory=dict, repr=False)


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            return ConfigError(f"unknown key {extra[0]!r}", path + [extra[0]])
    if err.context:
        # oneOf: report the branch that got furthest
        best = jsonschema.exceptions.best_match(err.context)
        return _schema_error(best)
    return ConfigError(err.message, path)


def _field(raw) -> ScalarField:
    if isinstance(raw, (int, float)):
        return ScalarField.constant(raw)
    kind = raw["kind"]
    if kind == "constant":
        return ScalarField.constant(raw["value"])
    if kind == "affine":
        return ScalarField.affine(raw["alpha"], raw["beta"])
    return ScalarField.clipped_affine(raw["alpha"], raw["beta"], raw["cap"])


def _intercept(raw) -> TimeFunction:
    if isinstance(raw, (int, float)):
        return TimeFunction.constant(raw)
    return TimeFunction(tuple(raw["values"]), tuple(raw["breaks"]))


def build_problem(p: dict) -> ProblemSpec:
    m = p["mode_count"]
    gen = p["generator"]
    intercepts = tuple(_intercept(a) for a in gen["intercepts"])
    costs_raw = p["costs"]
    if costs_raw["kind"] == "linear":
        costs = LinearCosts(tuple(tuple(r) for r in costs_raw["k"]))
    else:
        costs = GeneralCosts.affine(costs_raw["slope"], costs_raw["offset"])
    return ProblemSpec(
        m,
        float(p["horizon"]),
        GeneratorSpec(intercepts, tuple(gen.get("y_coefs", [0.0] * len(intercepts))),
                      tuple(gen.get("z_coefs", [0.0] * len(intercepts)))),
        costs,
        tuple(_field(s) for s in p["upper_barriers"]),
        tuple(_field(g) for g in p["terminals"]),
        bool(p.get("allow_nonstrict_costs", False)),
    )


def with_defaults(raw: dict) -> dict:
    cfg = copy.deepcopy(raw)
    cfg.setdefault("solver", {})
    for k, v in _SOLVER_DEFAULTS.items():
        cfg["solver"].setdefault(k, copy.deepcopy(v))
    cfg["lattice"].setdefault("kind", RECOMBINING)
    cfg.setdefault("output", {})
    cfg["output"].setdefault("directory", "oblique_rbsde_out")
    cfg["output"].setdefault("formats", list(FORMATS))
    return cfg


def parse_config_dict(raw) -> RunConfig:
    """Validate a decoded config object and build the typed :class:`RunConfig`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        raise _schema_error(errors[0])
    if not raw["tasks"]:
        raise ConfigError("at least one task is required", ["tasks"])
    cfg = with_defaults(raw)

    try:
        spec = build_problem(cfg["problem"])
    except SpecStructureError as exc:
        raise ConfigError(str(exc), ["problem"]) from exc
    grid = GridSpec(**cfg["problem"].get("sample_grid", {}))
    report = validate_hypotheses(spec, grid)
    if not report.ok:
        failed = ", ".join(c.hypothesis for c in report.failures())
        raise HypothesisError(f"problem violates hypotheses {failed}", report)

    s = cfg["solver"]
    backend = s["backend"]
    if backend == "penalty_oblique" and not spec.is_linear:
        raise ConfigError("penalty_oblique requires linear costs", ["solver", "backend"])
    if backend in ("penalty_upper", "penalty_oblique") and "solve" in cfg["tasks"] and s["n_pen"] is None:
        raise ConfigError(f"backend {backend} needs solver.n_pen", ["solver", "n_pen"])
    if "penalty_sweep" in cfg["tasks"] and not s["n_pen_sweep"]:
        raise ConfigError("penalty_sweep needs a nonempty n_pen_sweep list", ["solver", "n_pen_sweep"])
    sweep_backend = s.get("sweep_backend")
    if sweep_backend is None:
        sweep_backend = backend if backend.startswith("penalty") else (
            "penalty_oblique" if spec.mode_count > 1 and spec.is_linear else "penalty_upper")
        s["sweep_backend"] = sweep_backend
    if sweep_backend == "penalty_oblique" and not spec.is_linear:
        raise ConfigError("penalty_oblique requires linear costs", ["solver", "sweep_backend"])

    try:
        lattice = build_lattice(spec.horizon, cfg["lattice"]["N"], cfg["lattice"]["kind"])
        options = SolverOptions(**{k: s[k] for k in _OPTION_KEYS})
    except ValueError as exc:
        raise ConfigError(str(exc), ["lattice"] if "full_tree" in str(exc) else ["solver"]) from exc

    return RunConfig(
        spec=spec,
        lattice=lattice,
        backend=backend,
        options=options,
        tasks=tuple(cfg["tasks"]),
        output_dir=cfg["output"]["directory"],
        formats=tuple(cfg["output"]["formats"]),
        n_pen_sweep=tuple(float(x) for x in s["n_pen_sweep"]),
        sweep_backend=sweep_backend,
        verify_tol=float(s["verify_tol"]),
        validation=report,
        raw=cfg,
    )


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    return parse_config_dict(raw)


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value`` to a decoded config; the value is parsed as JSON when possible."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    parts = key.split(".")
    node = raw
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise ConfigError(f"override path {key!r} does not exist", parts[:i + 1]) from None
            continue
        node = node.setdefault(part, {})
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"override path {key!r} runs through a scalar", parts[:i + 1])
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = parsed
        except (ValueError, IndexError):
            raise ConfigError(f"override path {key!r} does not exist", parts) from None
    else:
        node[last] = parsed
    return raw
