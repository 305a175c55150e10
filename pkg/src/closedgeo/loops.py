"""Closed piecewise-geodesic loops (geodesic m-gons) and sweepout families.

A loop stores its ``m`` vertices only; edge ``k`` is the unique minimizing
geodesic from ``v_k`` to ``v_{k+1}``.  The last edge ends at ``twist(v_0)``:
on a covering chart (flat-torus lift, unwrapped polar angle) a loop that is
closed downstairs is closed up to a deck transformation upstairs.  For an
ordinary closed loop the twist is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .affine import AffineIsometry
from .errors import ConnectivityError, ResolutionError
from .geodesic import SegmentBatch, SolverParams, connect_batch, raise_for_status
from .manifold import MetricChart


@dataclass(frozen=True, eq=False)
class GeodesicLoop:
    chart: MetricChart
    vertices: np.ndarray
    twist: Optional[AffineIsometry] = None
    solver: SolverParams = field(default_factory=SolverParams)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != self.chart.dim:
            raise ValueError(f"vertices must have shape (m, {self.chart.dim})")
        m = verts.shape[0]
        if m < 2 or m % 2:
            raise ValueError(f"m must be an even integer >= 2, got {m}")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        if self.twist is None:
            object.__setattr__(self, "twist", AffineIsometry.identity(self.chart.dim))

    @property
    def m(self) -> int:
        return self.vertices.shape[0]

    @property
    def is_twisted(self) -> bool:
        return not self.twist.is_identity(tol=0.0)

    def edge_ends(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of the ``m`` edges."""
        q = np.roll(self.vertices, -1, axis=0)
        q[-1] = self.twist.apply(self.vertices[0])
        return self.vertices, q

    def segments(self) -> SegmentBatch:
        """The ``m`` edge geodesics (solved once, then cached)."""
        if "segments" not in self._cache:
            p, q = self.edge_ends()
            batch, status = connect_batch(
                self.chart, p, q, tol=self.solver.tol_bvp,
                max_newton=self.solver.max_newton, steps=self.solver.steps,
            )
            raise_for_status(status, p, q)
            _check_radius(self.chart, batch.lengths)
            self._cache["segments"] = batch
            self._cache.setdefault("edge_lengths", batch.lengths.copy())
        return self._cache["segments"]

    def edge_lengths(self) -> np.ndarray:
        if "edge_lengths" not in self._cache:
            self.segments()
        return self._cache["edge_lengths"]

    def with_vertices(self, vertices, edge_lengths=None) -> "GeodesicLoop":
        loop = GeodesicLoop(self.chart, vertices, self.twist, self.solver)
        if edge_lengths is not None:
            loop._cache["edge_lengths"] = np.asarray(edge_lengths, dtype=float)
        return loop

    def fresh(self) -> "GeodesicLoop":
        """Same loop with every cache dropped (edges re-solved on demand)."""
        return GeodesicLoop(self.chart, self.vertices, self.twist, self.solver)


def _check_radius(chart: MetricChart, lengths) -> None:
    bad = np.flatnonzero(lengths >= chart.r)
    if bad.size:
        k = int(bad[0])
        raise ConnectivityError(
            f"edge {k} has length {lengths[k]:.6g} >= injectivity radius {chart.r}; "
            "the edge geodesic is not guaranteed unique (increase m)"
        )


def constant_loop(chart: MetricChart, p, m: int, solver: SolverParams | None = None) -> GeodesicLoop:
    verts = np.repeat(np.asarray(p, dtype=float)[None, :], m, axis=0)
    return GeodesicLoop(chart, verts, None, solver or SolverParams())


def energy(loop: GeodesicLoop) -> float:
    """``E = (m/2) * sum_k d(v_k, v_{k+1})^2`` (uniform, constant-speed edges)."""
    d = loop.edge_lengths()
    return float(0.5 * loop.m * np.sum(d * d))


def length(loop: GeodesicLoop) -> float:
    return float(np.sum(loop.edge_lengths()))


def integrated_energy(loop: GeodesicLoop) -> float:
    """``(1/2) int_0^1 |c'|^2 dt`` by Simpson's rule over the cached RK4 states.

    Independent of the closed-form :func:`energy`; used as a consistency check.
    """
    seg = loop.segments()
    total = 0.0
    for k in range(loop.m):
        s = int(seg.steps[k])
        speeds = loop.chart.norm(seg.xs[k, : s + 1], seg.ws[k, : s + 1]) ** 2
        if s % 2 == 0 and s >= 2:
            integral = (speeds[0] + speeds[-1] + 4 * speeds[1:-1:2].sum() + 2 * speeds[2:-1:2].sum()) / (3 * s)
        else:
            integral = np.trapezoid(speeds, dx=1.0 / s)
        # edge k occupies parameter length 1/m, so c' = m * (edge velocity)
        total += 0.5 * loop.m * integral
    return float(total)


def transform(loop: GeodesicLoop, g: AffineIsometry) -> GeodesicLoop:
    """Image ``g . loop``; the twist is conjugated to ``g tau g^-1``."""
    twist = g @ loop.twist @ g.inverse()
    out = GeodesicLoop(loop.chart, g.apply(loop.vertices), twist, loop.solver)
    if "edge_lengths" in loop._cache:
        out._cache["edge_lengths"] = loop._cache["edge_lengths"].copy()
    return out


def sample_points(loop: GeodesicLoop, per_edge: int) -> np.ndarray:
    """Points at parameters ``(k + j/per_edge)/m`` for all edges ``k``."""
    seg = loop.segments()
    pts = np.empty((loop.m, per_edge, loop.chart.dim))
    for j in range(per_edge):
        pts[:, j] = seg.evaluate(j / per_edge)
    return pts.reshape(-1, loop.chart.dim)


def loop_distance(a: GeodesicLoop, b: GeodesicLoop, samples_per_edge: int = 4) -> float:
    """``max_t d(a(t), b(t))`` over vertices plus per-edge samples."""
    if a.chart is not b.chart:
        raise ValueError("loops live on different charts")
    if a.m != b.m:
        raise ValueError(f"loops have different vertex counts ({a.m} vs {b.m})")
    pa = sample_points(a, samples_per_edge)
    pb = sample_points(b, samples_per_edge)
    batch, status = connect_batch(a.chart, pa, pb, tol=a.solver.tol_bvp, max_newton=a.solver.max_newton)
    raise_for_status(status, pa, pb)
    return float(np.max(batch.lengths))


def resample(
    curve: Callable[[float], Sequence[float]],
    chart: MetricChart,
    m: int,
    twist: AffineIsometry | None = None,
    solver: SolverParams | None = None,
    closure_tol: float = 1e-9,
) -> GeodesicLoop:
    """Geodesic m-gon with vertices ``curve(k/m)``.

    ``curve(1)`` must equal ``twist(curve(0))`` (plain closure when ``twist``
    is omitted).
    """
    if m < 2 or m % 2:
        raise ValueError(f"m must be an even integer >= 2, got {m}")
    twist = twist or AffineIsometry.identity(chart.dim)
    start = np.asarray(curve(0.0), dtype=float)
    end = np.asarray(curve(1.0), dtype=float)
    gap = float(np.max(np.abs(end - twist.apply(start))))
    if gap > closure_tol * (1.0 + float(np.max(np.abs(end)))):
        raise ValueError(f"curve is not closed: curve(1) differs from twist(curve(0)) by {gap:.3g}")
    verts = np.array([np.asarray(curve(k / m), dtype=float) for k in range(m)])
    loop = GeodesicLoop(chart, verts, twist, solver or SolverParams())
    p, q = loop.edge_ends()
    batch, status = connect_batch(chart, p, q, tol=loop.solver.tol_bvp, max_newton=loop.solver.max_newton)
    too_far = (status != 0) | (batch.lengths >= chart.r)
    if too_far.any():
        k = int(np.flatnonzero(too_far)[0])
        raise ResolutionError(
            f"samples {k} and {(k + 1) % m} are not within the injectivity radius {chart.r}; use a larger m"
        )
    loop._cache["segments"] = batch
    loop._cache["edge_lengths"] = batch.lengths.copy()
    return loop


# -- sweepouts ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sweepout:
    """Loops ``f_x`` over a grid on the closed unit ball ``B^{k-1}``."""

    chart: MetricChart
    k: int
    grid: np.ndarray
    boundary: np.ndarray
    loops: tuple

    @property
    def m(self) -> int:
        return self.loops[0].m

    @property
    def kappa(self) -> float:
        return sweepout_kappa(self)

    def energies(self) -> np.ndarray:
        return np.array([energy(c) for c in self.loops])


def ball_grid(k: int, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid on the closed ball of dimension ``k - 1`` plus boundary flags.

    A uniform lattice of ``[-1, 1]^{k-1}`` with an odd side count; lattice
    points outside the ball are projected onto the sphere and flagged.
    """
    if not 1 <= k <= 3:
        raise ValueError("sweepouts are supported for 1 <= k <= 3")
    if k == 1:
        return np.zeros((1, 0)), np.zeros(1, dtype=bool)
    if resolution < 3 or resolution % 2 == 0:
        raise ValueError("grid_resolution must be an odd integer >= 3")
    axis = np.linspace(-1.0, 1.0, resolution)
    if k == 2:
        grid = axis[:, None]
    else:
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        grid = np.column_stack([xx.ravel(), yy.ravel()])
    norms = np.linalg.norm(grid, axis=1)
    boundary = norms >= 1.0
    grid[boundary] /= norms[boundary, None]
    return grid, boundary


def build_sweepout(
    family: Callable[[np.ndarray, float], Sequence[float]],
    chart: MetricChart,
    k: int,
    grid_resolution: int,
    m: int,
    twist: AffineIsometry | None = None,
    solver: SolverParams | None = None,
) -> Sweepout:
    """Discretize ``x -> f_x`` with ``f_x(t) = family(x, t)``.

    Boundary grid points get the constant loop at ``family(x, 0)``, since
    ``alpha_x = 0`` there.  ``twist`` closes the interior loops (see
    :func:`resample`).
    """
    grid, boundary = ball_grid(k, grid_resolution)
    loops = []
    for x, on_boundary in zip(grid, boundary):
        if on_boundary:
            loops.append(constant_loop(chart, family(x, 0.0), m, solver))
        else:
            loops.append(resample(lambda t, x=x: family(x, t), chart, m, twist, solver))
    return Sweepout(chart, k, grid, boundary, tuple(loops))


def family_from_sphere_map(f: Callable[[np.ndarray], Sequence[float]]):
    """Turn a map on ``S^k`` into ``(x, t) -> f(x, a cos 2 pi t, a sin 2 pi t)``, ``|x|^2 + a^2 = 1``."""

    def family(x, t):
        x = np.asarray(x, dtype=float)
        alpha = math.sqrt(max(0.0, 1.0 - float(x @ x)))
        y = np.concatenate([x, [alpha * math.cos(2 * math.pi * t), alpha * math.sin(2 * math.pi * t)]])
        return f(y)

    return family


def latitude_family(delta: float = 1e-3):
    """Latitude circles of the polar sphere chart: ``f_x(t) = (arccos x, 2 pi t)``.

    Returns ``(family, twist)``; the twist is the deck translation of the
    unwrapped longitude.
    """

    def family(x, t):
        theta = min(max(math.acos(max(-1.0, min(1.0, float(x[0])))), delta), math.pi - delta)
        return np.array([theta, 2 * math.pi * t]) if abs(float(x[0])) < 1.0 else np.array([theta, 0.0])

    return family, AffineIsometry.translation([0.0, 2 * math.pi], name="rot")


def class_line_family(direction, amplitude: float = 0.0, base=None, mode: int = 1):
    """Lift of a lattice-class loop: ``t -> base + t w + amplitude sin(2 pi mode t) n``.

    ``n`` is the unit normal to ``w`` (2-D) or the first coordinate axis not
    parallel to it.  Returns ``(family, twist)`` with twist = translation by ``w``.
    """
    w = np.asarray(direction, dtype=float)
    base = np.zeros_like(w) if base is None else np.asarray(base, dtype=float)
    if w.size == 2:
        normal = np.array([-w[1], w[0]]) / np.linalg.norm(w)
    else:
        normal = np.eye(w.size)[int(np.argmin(np.abs(w)))]

    def family(x, t):
        return base + t * w + amplitude * math.sin(2 * math.pi * mode * t) * normal

    return family, AffineIsometry.translation(w, name="w")


def sweepout_kappa(s: Sweepout) -> float:
    """``kappa = max_x E(f_x)`` over the grid."""
    return float(max(energy(c) for c in s.loops))
