"""Run configuration: JSON schema, validation and object builders."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import jsonschema
import numpy as np

from . import loops as L
from .affine import AffineIsometry
from .errors import ConfigError, ExpressionError
from .expression import compile_expression, parse_expression
from .geodesic import SolverParams
from .manifold import MetricChart, from_config as chart_from_config
from .orbifold import DevelopableOrbifold, orbifold_from_config
from .shortening import ShorteningConfig, choose_m
from .symmetry import IsometryGroup, group_from_config

COMMANDS = ("shorten", "minmax", "reduce", "verify", "exp")
M_PROBE = 64

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_entry = {"type": ["number", "string"]}

_isometry = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"A": _matrix, "b": _vector, "name": {"type": "string", "minLength": 1}},
}

_group = {
    "type": "object",
    "additionalProperties": False,
    "required": ["generators"],
    "properties": {
        "kind": {"enum": ["finite", "deck"]},
        "generators": {"type": "array", "items": _isometry, "minItems": 1},
        "fundamental_domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["box"],
            "properties": {
                "box": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 2, "maxItems": 2},
                    "minItems": 1,
                }
            },
        },
        "max_elements": {"type": "integer", "minimum": 1},
    },
}

_manifold = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "r"],
    "properties": {
        "type": {"enum": ["euclidean", "flat", "sphere_chart", "conformal", "custom"]},
        "dim": {"type": "integer", "minimum": 1, "maximum": 9},
        "entries": {"type": "array", "items": {"type": "array", "items": _entry, "minItems": 1}, "minItems": 1},
        "r": _positive,
        "fd_step": _positive,
        "R": _positive,
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "lambda": {"type": "string"},
        "domain": {"type": "array", "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}},
    },
}

_odd_resolution = {"type": "integer", "minimum": 3, "not": {"multipleOf": 2}}

_sweepout = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["latitude", "class_line", "custom_expression"]},
        "k": {"type": "integer", "minimum": 1, "maximum": 3},
        "grid_resolution": _odd_resolution,
        "direction": _vector,
        "amplitude": _number,
        "mode": {"type": "integer", "minimum": 1},
        "base": _vector,
        "components": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "twist": _isometry,
    },
}

_loop = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["circle", "class_line", "vertices", "expression"]},
        "center": _vector,
        "radius": _positive,
        "direction": _vector,
        "amplitude": _number,
        "mode": {"type": "integer", "minimum": 1},
        "base": _vector,
        "vertices": _matrix,
        "components": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "twist": _isometry,
        "noise": {"type": "number", "minimum": 0},
    },
}

_solver = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "m": {"oneOf": [{"type": "integer", "minimum": 2, "multipleOf": 2}, {"const": "auto"}]},
        "tol_energy": _positive,
        "tol_vertex": _positive,
        "tol_angle": _positive,
        "max_iters": {"type": "integer", "minimum": 1},
        "degenerate_length": _positive,
        "tol_bvp": _positive,
        "max_newton": {"type": "integer", "minimum": 1},
        "steps_per_segment": {"type": "integer", "minimum": 1},
        "window": {"type": "integer", "minimum": 1},
    },
}

_orbifold = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {"enum": ["sphere", "flat_torus", "chart"]},
        "n": {"type": "integer", "minimum": 1, "maximum": 8},
        "group": _group,
        "manifold": _manifold,
    },
}

_verify = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "samples": {"type": "integer", "minimum": 1},
        "tol": _positive,
        "isometries": {"type": "array", "items": _isometry},
        "twisted": {
            "type": "object",
            "additionalProperties": False,
            "required": ["start", "velocity", "twist"],
            "properties": {"start": _vector, "velocity": _vector, "twist": _isometry},
        },
    },
}

_exp = {
    "type": "object",
    "additionalProperties": False,
    "required": ["point", "velocity"],
    "properties": {"point": _vector, "velocity": _vector, "steps": {"type": "integer", "minimum": 1}},
}

_output = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "result": {"type": "string"},
        "trace": {"type": "string"},
        "curve": {"type": "string"},
        "curve_format": {"enum": ["csv", "json"]},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "description": {"type": "string"},
        "manifold": _manifold,
        "group": _group,
        "sweepout": _sweepout,
        "loop": _loop,
        "solver": _solver,
        "orbifold": _orbifold,
        "verify": _verify,
        "exp": _exp,
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "output": _output,
    },
}

_validator = jsonschema.Draft202012Validator(SCHEMA)


def pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate(cfg) -> None:
    """Raise :class:`ConfigError` naming the JSON pointer of the first problem."""
    errors = sorted(_validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(f"{pointer(err.absolute_path)}: {err.message}")


def load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"/: invalid JSON ({exc.msg} at line {exc.lineno} column {exc.colno})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    validate(cfg)
    return cfg


# -- builders -------------------------------------------------------------------


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: '{key}' is required for this command")
    return cfg[key]


def build_chart(cfg: dict) -> MetricChart:
    m = _require(cfg, "manifold", "/")
    try:
        return chart_from_config(m)
    except (KeyError, ExpressionError, ValueError) as exc:
        raise ConfigError(f"/manifold: {exc}") from None


def build_group(cfg: dict, dim: int) -> Optional[IsometryGroup]:
    if "group" not in cfg:
        return None
    try:
        return group_from_config(cfg["group"], dim)
    except ValueError as exc:
        raise ConfigError(f"/group: {exc}") from None


def build_isometry(entry: dict, dim: int, where: str) -> AffineIsometry:
    A = np.array(entry.get("A", np.eye(dim).tolist()), dtype=float)
    b = np.array(entry.get("b", [0.0] * dim), dtype=float)
    if A.shape != (dim, dim) or b.shape != (dim,):
        raise ConfigError(f"{where}: expected a {dim}x{dim} matrix A and a length-{dim} vector b")
    name = entry.get("name", "tau")
    return AffineIsometry(A, b, ((name, 1),))


def solver_params(cfg: dict) -> SolverParams:
    s = cfg.get("solver", {})
    return SolverParams(
        tol_bvp=float(s.get("tol_bvp", SolverParams.tol_bvp)),
        max_newton=int(s.get("max_newton", SolverParams.max_newton)),
        steps=s.get("steps_per_segment"),
    )


def shortening_config(cfg: dict, m: Optional[int]) -> ShorteningConfig:
    s = cfg.get("solver", {})
    defaults = ShorteningConfig()
    return ShorteningConfig(
        m=m,
        tol_energy=float(s.get("tol_energy", defaults.tol_energy)),
        tol_vertex=float(s.get("tol_vertex", defaults.tol_vertex)),
        tol_angle=float(s.get("tol_angle", defaults.tol_angle)),
        max_iters=int(s.get("max_iters", defaults.max_iters)),
        degenerate_length=s.get("degenerate_length"),
        window=int(s.get("window", defaults.window)),
    )


def _expression_curve(components, names, dim: int, where: str):
    if len(components) != dim:
        raise ConfigError(f"{where}/components: need {dim} expressions, got {len(components)}")
    try:
        fns = [compile_expression(parse_expression(c, variables=names), names) for c in components]
    except ExpressionError as exc:
        raise ConfigError(f"{where}/components: {exc}") from None
    return fns


@dataclass
class LoopSpec:
    curve: object
    twist: Optional[AffineIsometry]
    noise: float = 0.0


def loop_spec(cfg: dict, chart: MetricChart) -> LoopSpec:
    spec = _require(cfg, "loop", "/")
    n = chart.dim
    kind = spec["kind"]
    twist = build_isometry(spec["twist"], n, "/loop/twist") if "twist" in spec else None
    if kind == "circle":
        center = np.array(spec.get("center", [0.0] * n), dtype=float)
        radius = float(spec.get("radius", 1.0))
        if n != 2 or center.shape != (2,):
            raise ConfigError("/loop: circle loops need a 2-dimensional chart")

        def curve(t):
            return center + radius * np.array([math.cos(2 * math.pi * t), math.sin(2 * math.pi * t)])

    elif kind == "class_line":
        direction = _require(spec, "direction", "/loop")
        if len(direction) != n:
            raise ConfigError(f"/loop/direction: expected {n} entries")
        fam, line_twist = L.class_line_family(
            direction, float(spec.get("amplitude", 0.0)), spec.get("base"), int(spec.get("mode", 1))
        )
        twist = twist or line_twist

        def curve(t):
            return fam(None, t)

    elif kind == "vertices":
        verts = np.array(_require(spec, "vertices", "/loop"), dtype=float)
        if verts.ndim != 2 or verts.shape[1] != n:
            raise ConfigError(f"/loop/vertices: expected rows of length {n}")
        return LoopSpec(verts, twist, float(spec.get("noise", 0.0)))
    else:
        fns = _expression_curve(_require(spec, "components", "/loop"), ("t",), n, "/loop")

        def curve(t):
            return np.array([float(f(t)) for f in fns])

    return LoopSpec(curve, twist, float(spec.get("noise", 0.0)))


def build_loop(spec: LoopSpec, chart: MetricChart, m: int, solver: SolverParams, seed: int) -> L.GeodesicLoop:
    if isinstance(spec.curve, np.ndarray):
        loop = L.GeodesicLoop(chart, spec.curve, spec.twist, solver)
    else:
        loop = L.resample(spec.curve, chart, m, spec.twist, solver)
    if spec.noise > 0:
        rng = np.random.default_rng(seed)
        verts = loop.vertices + spec.noise * rng.uniform(-1.0, 1.0, loop.vertices.shape)
        loop = L.GeodesicLoop(chart, verts, loop.twist, solver)
    return loop


def sweepout_family(cfg: dict, chart: MetricChart):
    """``(family, twist, k)`` for the sweepout section."""
    spec = _require(cfg, "sweepout", "/")
    kind = spec["kind"]
    n = chart.dim
    twist = build_isometry(spec["twist"], n, "/sweepout/twist") if "twist" in spec else None
    if kind == "latitude":
        if chart.params.get("type") != "sphere_chart":
            raise ConfigError("/sweepout: latitude sweepouts need a sphere_chart manifold")
        delta = float(chart.params.get("delta", 1e-3))
        fam, lat_twist = L.latitude_family(delta)
        return fam, twist or lat_twist, int(spec.get("k", 2))
    if kind == "class_line":
        direction = _require(spec, "direction", "/sweepout")
        if len(direction) != n:
            raise ConfigError(f"/sweepout/direction: expected {n} entries")
        fam, line_twist = L.class_line_family(
            direction, float(spec.get("amplitude", 0.0)), spec.get("base"), int(spec.get("mode", 1))
        )
        return fam, twist or line_twist, int(spec.get("k", 1))
    k = int(spec.get("k", 2))
    names = tuple(f"x{i + 1}" for i in range(k - 1)) + ("u", "v")
    fns = _expression_curve(_require(spec, "components", "/sweepout"), names, n, "/sweepout")

    def family(x, t):
        x = np.asarray(x, dtype=float)
        alpha = math.sqrt(max(0.0, 1.0 - float(x @ x)))
        u, v = alpha * math.cos(2 * math.pi * t), alpha * math.sin(2 * math.pi * t)
        args = list(x) + [u, v]
        return np.array([float(f(*args)) for f in fns])

    return family, twist, k


def resolve_m(requested, kappa_probe) -> int:
    """Explicit ``m`` or ``choose_m`` from a probe energy when ``'auto'``."""
    if requested is None or requested == "auto":
        kappa, r = kappa_probe()
        return choose_m(kappa, r)
    m = int(requested)
    if m < 2 or m % 2:
        raise ConfigError(f"/solver/m: m must be an even integer >= 2, got {requested}")
    return m


def build_orbifold(cfg: dict) -> DevelopableOrbifold:
    spec = _require(cfg, "orbifold", "/")
    try:
        return orbifold_from_config(spec)
    except ConfigError as exc:
        raise ConfigError(f"/orbifold: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"/orbifold: {exc}") from None
