"""Command-line front end.

Exit codes: 0 found / pass, 1 verification failed, 2 degenerate,
3 no convergence (or unresolved reduction), 4 configuration error,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from typing import Optional, Sequence

import numpy as np

from . import config as C
from . import loops as L
from .errors import (
    ClosedGeoError,
    ConfigError,
    ConnectivityError,
    DomainError,
    GroupOverflowError,
    NumericError,
    RenormalizationError,
    ResolutionError,
)
from .geodesic import exp_map
from .orbifold import ExactGeodesic, find_closed_geodesic_via_reduction, is_twisted_closed_geodesic
from .shortening import GeodesicResult, closure_residuals, minmax, shorten_to_limit
from .symmetry import verify_isometry

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_DEGENERATE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5

STATUS_EXIT = {
    "found": EXIT_OK,
    "pass": EXIT_OK,
    "fail": EXIT_FAILED,
    "verification_failed": EXIT_FAILED,
    "degenerate": EXIT_DEGENERATE,
    "no_convergence": EXIT_NO_CONVERGENCE,
    "reduced_to_even_isolated": EXIT_NO_CONVERGENCE,
}

SAMPLES_PER_EDGE = 16


# -- output helpers -------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write through a temporary file in the target directory and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def result_json(res: GeodesicResult) -> dict:
    loop = res.loop
    try:
        pos, vel = closure_residuals(loop)
    except ClosedGeoError:
        pos, vel = math.nan, math.nan
    return {
        "status": res.status,
        "m": loop.m,
        "vertices": loop.vertices,
        "length": res.length,
        "energy": res.energy,
        "angle_defect": res.angle_defect,
        "energy_gap": res.energy_gap,
        "twist": res.twist.to_json(),
        "closure_position_residual": pos,
        "closure_velocity_residual": vel,
        "iterations": res.iterations,
        "renormalization_word": res.g_word,
        "argmax": res.argmax,
        "diagnostics": res.diagnostics,
    }


def curve_samples(curve, per_edge: int = SAMPLES_PER_EDGE):
    """``(t, points)`` sampled ``per_edge`` times per edge (64 nominal edges for exact curves)."""
    if isinstance(curve, ExactGeodesic):
        t = np.arange(64 * per_edge) / (64 * per_edge)
        return t, curve.evaluate(t)
    pts = L.sample_points(curve, per_edge)
    t = np.arange(curve.m * per_edge) / (curve.m * per_edge)
    return t, pts


def emit_curve(curve, path: str, fmt: str = "csv") -> None:
    """Write a result curve for plotting: CSV rows ``t, x1..xn`` or a JSON object."""
    t, pts = curve_samples(curve)
    if fmt == "json":
        write_atomic(path, dumps({"t": t, "points": pts}))
        return
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{i + 1}" for i in range(pts.shape[1])])
    for ti, row in zip(t, pts):
        writer.writerow([repr(float(ti))] + [repr(float(v)) for v in row])
    write_atomic(path, buf.getvalue())


def trace_jsonl(records) -> str:
    return "".join(json.dumps(_clean(r), sort_keys=True) + "\n" for r in records)


# -- commands -----------------------------------------------------------------------


def _seed(cfg, args) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _apply_overrides(cfg: dict, args) -> dict:
    solver = dict(cfg.get("solver", {}))
    if args.m is not None:
        solver["m"] = args.m if args.m == "auto" else _parse_m(args.m)
    if args.max_iters is not None:
        solver["max_iters"] = args.max_iters
    if args.tol_energy is not None:
        solver["tol_energy"] = args.tol_energy
    out = dict(cfg)
    if solver:
        out["solver"] = solver
    C.validate(out)
    return out


def _parse_m(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"--m: expected an even integer or 'auto', got {text!r}") from None


def cmd_shorten(cfg, args):
    chart = C.build_chart(cfg)
    group = C.build_group(cfg, chart.dim)
    solver = C.solver_params(cfg)
    spec = C.loop_spec(cfg, chart)
    seed = _seed(cfg, args)
    requested = cfg.get("solver", {}).get("m")

    def probe():
        loop = C.build_loop(spec, chart, C.M_PROBE, solver, seed)
        return L.energy(loop), chart.r

    m = C.resolve_m(requested, probe) if not isinstance(spec.curve, np.ndarray) else spec.curve.shape[0]
    loop = C.build_loop(spec, chart, m, solver, seed)
    res = shorten_to_limit(loop, group, C.shortening_config(cfg, m))
    return res.status, result_json(res), res.trace.records, res.loop


def cmd_minmax(cfg, args):
    chart = C.build_chart(cfg)
    group = C.build_group(cfg, chart.dim)
    solver = C.solver_params(cfg)
    family, twist, k = C.sweepout_family(cfg, chart)
    res_grid = int(cfg["sweepout"].get("grid_resolution", 41 if k > 1 else 3))

    def build(m):
        return L.build_sweepout(family, chart, k, res_grid, m, twist, solver)

    def probe():
        return L.sweepout_kappa(build(C.M_PROBE)), chart.r

    m = C.resolve_m(cfg.get("solver", {}).get("m"), probe)
    sweep = build(m)
    threads = args.threads if args.threads is not None else int(cfg.get("threads", 1))
    res = minmax(sweep, group, C.shortening_config(cfg, m), threads=threads)
    out = result_json(res)
    out["kappa"] = L.sweepout_kappa(sweep)
    out["grid_points"] = len(sweep.loops)
    return res.status, out, res.trace.records, res.loop


def cmd_reduce(cfg, args):
    orb = C.build_orbifold(cfg)
    if orb.model == "chart":
        raise ConfigError("/orbifold/model: automatic reduction needs the sphere or flat_torus model")
    res = find_closed_geodesic_via_reduction(orb)
    return res.status, res.to_json(), [], res.geodesic


def cmd_verify(cfg, args):
    chart = C.build_chart(cfg)
    spec = cfg.get("verify", {})
    samples = int(spec.get("samples", 50))
    tol = float(spec.get("tol", 1e-9))
    rng = np.random.default_rng(_seed(cfg, args))
    isos = []
    if "group" in cfg:
        group = C.build_group(cfg, chart.dim)
        isos.extend(group.generators)
    for i, entry in enumerate(spec.get("isometries", [])):
        isos.append(C.build_isometry(entry, chart.dim, f"/verify/isometries/{i}"))
    checks = []
    passed = True
    for g in isos:
        rep = verify_isometry(chart, g, samples, tol, rng)
        checks.append({"word": g.word_str, "passed": rep.passed, "worst": rep.worst, "entry": list(rep.entry),
                       "samples": rep.samples})
        passed &= rep.passed
    out = {"isometries": checks}
    if "twisted" in spec:
        tw = spec["twisted"]
        g = C.build_isometry(tw["twist"], chart.dim, "/verify/twisted/twist")
        seg = exp_map(chart, tw["start"], tw["velocity"])
        rep = is_twisted_closed_geodesic(chart, seg, g, tol)
        out["twisted"] = {"passed": rep.passed, "position_residual": rep.position_residual,
                          "velocity_residual": rep.velocity_residual}
        passed &= rep.passed
    status = "pass" if passed else "fail"
    out["status"] = status
    return status, out, [], None


def cmd_exp(cfg, args):
    chart = C.build_chart(cfg)
    spec = C._require(cfg, "exp", "/")
    if len(spec["point"]) != chart.dim or len(spec["velocity"]) != chart.dim:
        raise ConfigError(f"/exp: point and velocity need {chart.dim} entries")
    seg = exp_map(chart, spec["point"], spec["velocity"], spec.get("steps"))
    out = {
        "status": "pass",
        "start": seg.start,
        "initial_velocity": seg.initial_velocity,
        "endpoint": seg.endpoint,
        "end_velocity": seg.end_velocity,
        "length": seg.length,
        "steps": seg.steps,
    }
    return "pass", out, [], None


COMMAND_FUNCS = {
    "shorten": cmd_shorten,
    "minmax": cmd_minmax,
    "reduce": cmd_reduce,
    "verify": cmd_verify,
    "exp": cmd_exp,
}


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="closedgeo", description="Find closed geodesics by Birkhoff min-max.")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--command", choices=C.COMMANDS, help="overrides the config's 'command'")
    p.add_argument("--m", help="even vertex count or 'auto'")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol-energy", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="result JSON path")
    p.add_argument("--trace", help="per-round JSON lines path")
    p.add_argument("--curve", help="sampled curve path (CSV unless --curve-format json)")
    p.add_argument("--curve-format", choices=["csv", "json"])
    return p


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def run(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    parser.__class__ = _Parser
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    try:
        cfg = C.load(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads: must be at least 1")
        command = args.command or cfg.get("command")
        if command is None:
            raise ConfigError("/command: no command given (use --command or the config's 'command')")
        status, payload, records, curve = COMMAND_FUNCS[command](cfg, args)
        payload = dict(payload)
        payload["command"] = command
        output = cfg.get("output", {})
        out_path = args.out or output.get("result")
        trace_path = args.trace or output.get("trace")
        curve_path = args.curve or output.get("curve")
        if out_path:
            write_atomic(out_path, dumps(payload))
        else:
            stdout.write(dumps(payload))
        if trace_path:
            write_atomic(trace_path, trace_jsonl(records))
        if curve_path and curve is not None:
            emit_curve(curve, curve_path, args.curve_format or output.get("curve_format", "csv"))
        print(f"status: {status}", file=stderr)
        return STATUS_EXIT.get(status, EXIT_FAILED)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except (NumericError, ConnectivityError, DomainError, ResolutionError, RenormalizationError,
            GroupOverflowError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=stderr)
        return EXIT_NUMERIC
    except ClosedGeoError as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=stderr)
        return EXIT_NUMERIC
    except (NotImplementedError, ValueError) as exc:
        print(f"config error: unsupported input: {exc}", file=stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
