"""Birkhoff curve shortening and the min-max driver over sweepouts.

``half_step`` with even parity keeps the even vertices and moves each odd
vertex to the geodesic midpoint of its even neighbours (the map D1); odd
parity does the same with the roles swapped (D2).  ``birkhoff_step`` is
``D = D2 o D1``.  After a half step both new edges around a moved vertex
are exactly half of the connecting geodesic, so the new energy is known
without solving again.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .affine import AffineIsometry
from .errors import ConnectivityError, NumericError
from .geodesic import connect_batch, raise_for_status
from .loops import GeodesicLoop, Sweepout, energy, length
from .symmetry import IsometryGroup, renormalize

TOL_ANGLE = 1e-6
CAUCHY_WINDOW = 10
MONOTONE_SLACK = 1e-12


def choose_m(kappa: float, r: float) -> int:
    """Smallest even ``m`` with ``2 kappa / m < r^2``, doubled, at least 8."""
    if kappa < 0 or r <= 0:
        raise ValueError("need kappa >= 0 and r > 0")
    bound = 2.0 * kappa / (r * r)
    m = 2 * (math.floor(bound / 2.0) + 1)
    return max(8, 2 * m)


@dataclass(frozen=True)
class ShorteningConfig:
    m: Optional[int] = None
    tol_energy: float = 1e-10
    tol_vertex: float = 1e-9
    tol_angle: float = TOL_ANGLE
    max_iters: int = 10000
    degenerate_length: Optional[float] = None
    window: int = CAUCHY_WINDOW

    def __post_init__(self):
        if self.m is not None and (self.m < 2 or self.m % 2):
            raise ValueError("m must be an even integer")
        if min(self.tol_energy, self.tol_vertex, self.tol_angle) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def ell_min(self, r: float) -> float:
        return r / 100.0 if self.degenerate_length is None else self.degenerate_length


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    classification: str = ""

    def add(self, n: int, e_n: float, argmax: int, g_word: str, max_disp: float) -> None:
        self.records.append({"n": n, "e_n": e_n, "argmax": argmax, "g_word": g_word, "max_disp": max_disp})

    @property
    def energies(self) -> np.ndarray:
        return np.array([r["e_n"] for r in self.records])

    def is_monotone(self, slack: float = MONOTONE_SLACK) -> bool:
        e = self.energies
        return bool(np.all(np.diff(e) <= slack))


@dataclass
class GeodesicResult:
    status: str
    loop: GeodesicLoop
    length: float
    energy: float
    angle_defect: float
    energy_gap: float
    twist: AffineIsometry
    trace: IterationTrace
    iterations: int
    g_word: str = "e"
    argmax: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return self.status == "found"


# -- Birkhoff maps ----------------------------------------------------------------


def _pairs(loop: GeodesicLoop, parity: str):
    v = loop.vertices
    if parity == "even":
        a = v[0::2]
        b = np.roll(a, -1, axis=0)
        b[-1] = loop.twist.apply(v[0])
    elif parity == "odd":
        b = v[1::2]
        a = np.roll(b, 1, axis=0)
        a[0] = loop.twist.inverse().apply(v[-1])
    else:
        raise ValueError("parity must be 'even' or 'odd'")
    return a, b


def half_step_many(loops, parity: str) -> list:
    """Apply D1 (``parity='even'``) or D2 (``'odd'``) to many loops with one batched solve."""
    if not loops:
        return []
    chart, solver = loops[0].chart, loops[0].solver
    starts, ends = zip(*(_pairs(c, parity) for c in loops))
    p, q = np.concatenate(starts), np.concatenate(ends)
    batch, status = connect_batch(chart, p, q, tol=solver.tol_bvp, max_newton=solver.max_newton, steps=solver.steps)
    raise_for_status(status, p, q)
    far = np.flatnonzero(batch.lengths >= chart.r)
    if far.size:
        i = int(far[0])
        raise ConnectivityError(
            f"vertices {p[i].tolist()} and {q[i].tolist()} are {batch.lengths[i]:.6g} apart, "
            f"not below the injectivity radius {chart.r} (m is too small)"
        )
    mids = batch.evaluate(0.5)
    half = 0.5 * batch.lengths
    out = []
    pos = 0
    for c in loops:
        h = c.m // 2
        verts = c.vertices.copy()
        d = half[pos:pos + h]
        lengths = np.empty(c.m)
        if parity == "even":
            verts[1::2] = mids[pos:pos + h]
            lengths[0::2] = d
            lengths[1::2] = d
        else:
            verts[0::2] = mids[pos:pos + h]
            lengths[0::2] = d
            lengths[1::2] = np.roll(d, -1)
        out.append(c.with_vertices(verts, lengths))
        pos += h
    return out


def half_step(loop: GeodesicLoop, parity: str) -> GeodesicLoop:
    return half_step_many([loop], parity)[0]


def birkhoff_step_many(loops) -> list:
    return half_step_many(half_step_many(loops, "even"), "odd")


def birkhoff_step(loop: GeodesicLoop) -> GeodesicLoop:
    """``D = D2 o D1``: energy- and length-nonincreasing, same ``m`` and twist."""
    return birkhoff_step_many([loop])[0]


# -- verification -------------------------------------------------------------------


def _unit_angle(chart, base, a, b) -> np.ndarray:
    na = chart.norm(base, a)[:, None]
    nb = chart.norm(base, b)[:, None]
    ua, ub = a / np.where(na > 0, na, 1.0), b / np.where(nb > 0, nb, 1.0)
    diff = chart.norm(base, ua - ub)
    summ = chart.norm(base, ua + ub)
    ang = 2.0 * np.arctan2(diff, summ)
    return np.where((na[:, 0] > 0) & (nb[:, 0] > 0), ang, 0.0)


def angle_defects(loop: GeodesicLoop) -> np.ndarray:
    """Turning angle at every vertex between incoming and outgoing edges.

    At ``v_0`` the incoming velocity (at ``twist(v_0)``) is pulled back by
    the linear part of the twist.
    """
    seg = loop.segments()
    outgoing = seg.v
    incoming = np.roll(seg.end_velocities(), 1, axis=0)
    incoming[0] = incoming[0] @ np.linalg.inv(loop.twist.A).T
    return _unit_angle(loop.chart, loop.vertices, incoming, outgoing)


def closure_residuals(loop: GeodesicLoop) -> tuple[float, float]:
    """``|twist(c(0)) - c(1)|`` and ``|d twist c'(0) - c'(1)|_g`` for the unit-interval parametrization."""
    seg = loop.segments()
    end = seg.xs[-1, seg.steps[-1]]
    pos = float(np.linalg.norm(loop.twist.apply(loop.vertices[0]) - end))
    v0 = loop.m * seg.v[0]
    v1 = loop.m * seg.end_velocities()[-1]
    base = end[None, :]
    vel = float(loop.chart.norm(base, (v0 @ loop.twist.A.T - v1)[None, :])[0])
    return pos, vel


def max_displacement(a: GeodesicLoop, b: GeodesicLoop) -> float:
    return float(np.max(np.abs(a.vertices - b.vertices)))


def verify_fixed_point(loop: GeodesicLoop, tol_energy: float) -> tuple[float, float, float]:
    """``(E(c) - E(Dc), max angle defect, max vertex displacement under D)``."""
    c = loop.fresh()
    d = birkhoff_step(c)
    gap = energy(c) - energy(d)
    return gap, float(np.max(angle_defects(c))), max_displacement(c, d)


def _result(status, loop, trace, iterations, config, g_word="e", argmax=0, diagnostics=None):
    loop = loop.fresh()
    if status == "found" or status == "no_convergence":
        try:
            gap, defect, _ = verify_fixed_point(loop, config.tol_energy)
        except ConnectivityError:
            gap, defect = math.nan, math.nan
    else:
        gap, defect = math.nan, math.nan
    trace.classification = status
    return GeodesicResult(
        status, loop, length(loop), energy(loop), defect, gap, loop.twist,
        trace, iterations, g_word, argmax, diagnostics or {},
    )


def _check_found(loop: GeodesicLoop, config: ShorteningConfig) -> bool:
    gap, defect, _ = verify_fixed_point(loop, config.tol_energy)
    return abs(gap) <= config.tol_energy and defect <= config.tol_angle


# -- drivers --------------------------------------------------------------------------


def shorten_to_limit(
    loop: GeodesicLoop,
    group: IsometryGroup | None = None,
    config: ShorteningConfig | None = None,
) -> GeodesicResult:
    """Iterate ``c <- renormalize(D c)`` until a fixed point, a collapse, or ``max_iters``."""
    config = config or ShorteningConfig()
    ell_min = config.ell_min(loop.chart.r)
    trace = IterationTrace()
    g_total = AffineIsometry.identity(loop.chart.dim)
    c = loop
    e_prev = energy(c)
    if length(c) < ell_min:
        trace.add(0, e_prev, 0, g_total.word_str, 0.0)
        return _result("degenerate", c, trace, 0, config)
    for n in range(1, config.max_iters + 1):
        d = birkhoff_step(c)
        e = energy(d)
        disp = max_displacement(c, d)
        if group is not None:
            g, d = renormalize(d, group)
            g_total = g @ g_total
        trace.add(n, e, 0, g_total.word_str, disp)
        if e > e_prev + MONOTONE_SLACK * max(1.0, e_prev):
            raise NumericError(f"energy increased from {e_prev!r} to {e!r} at iteration {n}")
        gap = e_prev - e
        c, e_prev = d, e
        if length(c) < ell_min:
            return _result("degenerate", c, trace, n, config, g_total.word_str)
        if gap < config.tol_energy and disp < config.tol_vertex and _check_found(c, config):
            return _result("found", c, trace, n, config, g_total.word_str)
    return _result("no_convergence", c, trace, config.max_iters, config, g_total.word_str)


def _chunks(indices, threads: int):
    if threads <= 1 or len(indices) <= 1:
        return [indices]
    size = math.ceil(len(indices) / threads)
    return [indices[i:i + size] for i in range(0, len(indices), size)]


def minmax(
    sweepout: Sweepout,
    group: IsometryGroup | None = None,
    config: ShorteningConfig | None = None,
    threads: int = 1,
    on_round=None,
) -> GeodesicResult:
    """Min-max over a sweepout: shorten every grid loop in lockstep, track the max.

    Each round applies ``D`` to every active loop, records ``e_n`` (max
    energy, lowest index on ties) and renormalizes the argmax loop.  The run
    is ``found`` once the renormalized argmax loop moves less than
    ``tol_vertex`` for ``window`` consecutive rounds and passes the
    fixed-point test.  Loops shorter than ``ell_min`` are frozen; when all
    are frozen the sweepout is reported degenerate.
    """
    config = config or ShorteningConfig()
    chart = sweepout.chart
    r = chart.r
    ell_min = config.ell_min(r)
    loops = list(sweepout.loops)
    frozen = np.array([length(c) < ell_min for c in loops])
    trace = IterationTrace()
    energies = np.array([energy(c) for c in loops])
    if frozen.all():
        trace.add(0, float(energies.max()), int(np.argmax(energies)), "e", 0.0)
        return _result("degenerate", loops[int(np.argmax(energies))], trace, 0, config, argmax=int(np.argmax(energies)))

    prev = None
    still = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for n in range(1, config.max_iters + 1):
            active = [int(i) for i in np.flatnonzero(~frozen)]
            chunks = _chunks(active, threads)
            if pool is None:
                stepped = [birkhoff_step_many([loops[i] for i in active])]
            else:
                stepped = list(pool.map(lambda idx: birkhoff_step_many([loops[i] for i in idx]), chunks))
            for idx, new in zip(chunks, stepped):
                for i, c in zip(idx, new):
                    loops[i] = c
                    energies[i] = energy(c)
                    frozen[i] = length(c) < ell_min
            k = int(np.argmax(energies))
            e_n = float(energies[k])
            g, rep = renormalize(loops[k], group) if group is not None else (None, loops[k])
            disp = math.inf if prev is None or prev.m != rep.m else max_displacement(prev, rep)
            trace.add(n, e_n, k, g.word_str if g is not None else "e", disp)
            if on_round is not None:
                on_round(trace.records[-1])
            if len(trace.records) > 1 and e_n > trace.records[-2]["e_n"] + MONOTONE_SLACK:
                raise NumericError(f"min-max value increased at round {n}")
            if frozen.all():
                return _result("degenerate", rep, trace, n, config, argmax=k)
            still = still + 1 if disp < config.tol_vertex else 0
            prev = rep
            if still >= config.window and _check_found(rep, config):
                res = _result("found", rep, trace, n, config, trace.records[-1]["g_word"], k)
                res.diagnostics.update({
                    "length_exceeds_r": res.length > r,
                    "energy_exceeds_half_r2": res.energy > 0.5 * r * r,
                    "energy_exceeds_r2": res.energy > r * r,
                })
                return res
    finally:
        if pool is not None:
            pool.shutdown()
    k = int(np.argmax(energies))
    return _result("no_convergence", loops[k], trace, config.max_iters, config, argmax=k)
