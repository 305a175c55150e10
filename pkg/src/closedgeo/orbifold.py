"""Developable orbifolds M/G on exact models and the singular-stratum reduction.

Two exact models are supported: the unit sphere ``S^n`` in ``R^{n+1}`` with
orthogonal symmetries, and the flat torus ``R^n / Z^n`` with lattice
compatible affine symmetries.  On both, fixed sets are affine subspaces and
closed geodesics are known in closed form, so every step of the reduction
can be checked exactly.

Reduction: pass to the orientation-preserving subgroup, pick a point on a
fixed set of maximal dimension, restrict the normalizer of its isotropy to
that fixed set, and recurse until the action is free (``manifold``), the
space is a circle (``dimension 1``), or only isolated singular points remain
in even dimension (unresolved).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .affine import AffineIsometry
from .errors import ClosedGeoError, ConfigError
from .geodesic import GeodesicSegment
from .loops import GeodesicLoop
from .manifold import MetricChart
from .symmetry import (
    AffineSubspace,
    IsometryGroup,
    check_group_axioms,
    fixed_set,
    isotropy,
    normalizer,
    orientation_subgroup,
    torus_fixed_components,
    verify_orthogonal,
)

STRATUM_OFFSET = 1.0 / math.pi
INVARIANCE_SAMPLES = 20
INVARIANCE_TOL = 1e-10


class NoSingularStratum(ClosedGeoError):
    """The action has no points with nontrivial isotropy (the quotient is a manifold)."""


@dataclass(frozen=True, eq=False)
class DevelopableOrbifold:
    model: str
    n: int
    group: IsometryGroup
    chart: Optional[MetricChart] = None

    def __post_init__(self):
        if self.model not in ("sphere", "flat_torus", "chart"):
            raise ConfigError(f"unknown orbifold model {self.model!r}")
        if self.model == "chart":
            if self.chart is None:
                raise ConfigError("chart model needs a metric chart")
            return
        if self.group.dim != self.ambient_dim:
            raise ConfigError(f"group acts on R^{self.group.dim}, model needs R^{self.ambient_dim}")
        if self.group.kind != "finite":
            raise ConfigError("exact models need a finite symmetry group")
        for g in self.group.generators:
            if self.model == "sphere" and verify_orthogonal(g) > 1e-12:
                raise ConfigError(f"generator {g.word_str} is not an orthogonal linear map")
            if self.model == "flat_torus":
                if np.max(np.abs(g.A - np.round(g.A))) > 1e-12 or np.max(np.abs(g.A.T @ g.A - np.eye(self.n))) > 1e-12:
                    raise ConfigError(f"generator {g.word_str} is not an integer orthogonal matrix")

    @property
    def ambient_dim(self) -> int:
        return self.n + 1 if self.model == "sphere" else self.n

    @property
    def mod_lattice(self) -> bool:
        return self.model == "flat_torus"

    @property
    def elements(self) -> list:
        return self.group.elements


def sphere_orbifold(n: int, generators) -> DevelopableOrbifold:
    gens = tuple(generators) or (AffineIsometry.identity(n + 1),)
    return DevelopableOrbifold("sphere", n, IsometryGroup(gens, "finite"))


def torus_orbifold(n: int, generators) -> DevelopableOrbifold:
    gens = tuple(generators) or (AffineIsometry.identity(n),)
    return DevelopableOrbifold("flat_torus", n, IsometryGroup(gens, "finite", mod_lattice=True))


# -- exact closed geodesics -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExactGeodesic:
    """``c(t) = base + cos(2 pi t) e1 + sin(2 pi t) e2`` (sphere) or ``base + t w`` (torus)."""

    model: str
    base: np.ndarray
    e1: np.ndarray
    e2: Optional[np.ndarray] = None

    @property
    def twist(self) -> AffineIsometry:
        if self.model == "sphere":
            return AffineIsometry.identity(self.base.size)
        return AffineIsometry.translation(self.e1, name="w")

    @property
    def length(self) -> float:
        if self.model == "sphere":
            return 2.0 * math.pi
        return float(np.linalg.norm(self.e1))

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        if self.model == "sphere":
            return self.base + np.cos(2 * np.pi * t) * self.e1 + np.sin(2 * np.pi * t) * self.e2
        return self.base + t * self.e1

    def velocity(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        if self.model == "sphere":
            return 2 * np.pi * (-np.sin(2 * np.pi * t) * self.e1 + np.cos(2 * np.pi * t) * self.e2)
        return np.broadcast_to(self.e1, t.shape[:-1] + self.e1.shape).copy()

    def geodesic_residual(self, samples: int = 64) -> float:
        """Deviation from being a unit-sphere great circle (0 for torus lines)."""
        if self.model != "sphere":
            return 0.0
        t = np.linspace(0.0, 1.0, samples)
        x = self.evaluate(t)
        acc = -(2 * np.pi) ** 2 * (x - self.base)
        # great circle: on the sphere and c'' = -|c'|^2 c
        res_sphere = np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0))
        res_eq = np.max(np.abs(acc + (2 * np.pi) ** 2 * x))
        return float(max(res_sphere, res_eq))

    def to_json(self) -> dict:
        out = {"model": self.model, "base": self.base.tolist(), "e1": self.e1.tolist(), "length": self.length}
        if self.e2 is not None:
            out["e2"] = self.e2.tolist()
        return out


@dataclass(frozen=True)
class TwistedReport:
    passed: bool
    position_residual: float
    velocity_residual: float
    geodesic_residual: float = 0.0


def _path_ends(path):
    """``(c(0), c'(0), c(1), c'(1))`` for a segment, a loop or an exact geodesic."""
    if isinstance(path, GeodesicSegment):
        return path.start, path.initial_velocity, path.endpoint, path.end_velocity
    if isinstance(path, GeodesicLoop):
        seg = path.segments()
        end = seg.xs[-1, seg.steps[-1]]
        return path.vertices[0], path.m * seg.v[0], end, path.m * seg.end_velocities()[-1]
    if isinstance(path, ExactGeodesic):
        return path.evaluate(0.0), path.velocity(0.0), path.evaluate(1.0), path.velocity(1.0)
    raise TypeError(f"cannot read endpoints of {type(path).__name__}")


def is_twisted_closed_geodesic(space, path, g: AffineIsometry, tol: float = 1e-10) -> TwistedReport:
    """Check ``g c(0) = c(1)`` and ``dg c'(0) = c'(1)``.

    ``space`` is a :class:`MetricChart` (norms in its metric at ``c(1)``) or
    a :class:`DevelopableOrbifold` on an exact model (ambient norms).
    Positions are compared through the metric at ``c(1)``, which is exact
    for flat charts.  For a loop, interior angle defects are also checked.
    """
    p0, v0, p1, v1 = _path_ends(path)
    dp = g.apply(p0) - p1
    dv = g.A @ v0 - v1
    geo = 0.0
    if isinstance(space, MetricChart):
        pos = float(space.norm(p1[None, :], dp[None, :])[0])
        vel = float(space.norm(p1[None, :], dv[None, :])[0])
        if isinstance(path, GeodesicLoop):
            from .shortening import angle_defects

            geo = float(np.max(angle_defects(path)[1:], initial=0.0))
    else:
        if space.mod_lattice:
            dp = dp - np.round(dp)
        pos = float(np.linalg.norm(dp))
        vel = float(np.linalg.norm(dv))
        if isinstance(path, ExactGeodesic):
            geo = path.geodesic_residual()
    return TwistedReport(max(pos, vel, geo) <= tol, pos, vel, geo)


# -- strata -----------------------------------------------------------------------------


def _components(orb: DevelopableOrbifold, g: AffineIsometry) -> list:
    if orb.model == "sphere":
        fs = fixed_set([g], sphere=True)
        return [] if fs.is_empty else [fs]
    return torus_fixed_components([g])


def _canonical_directions(comp: AffineSubspace, torus: bool) -> AffineSubspace:
    D = comp.directions
    if torus and D.shape[0]:
        aligned = np.all(np.isclose(np.abs(D), 0.0, atol=1e-12) | np.isclose(np.abs(D), 1.0, atol=1e-12))
        if not aligned:
            raise NotImplementedError("torus fixed sets must be coordinate-aligned subtori")
        axes = sorted(int(np.argmax(np.abs(row))) for row in D)
        D = np.eye(D.shape[1])[axes]
        base = comp.base.copy()
        base[axes] = 0.0
        return AffineSubspace(base, D)
    if D.shape[0]:
        # fix the sign of each direction: first nonzero entry positive
        D = D.copy()
        for i, row in enumerate(D):
            j = int(np.argmax(np.abs(row) > 1e-12))
            if row[j] < 0:
                D[i] = -row
        D[np.abs(D) < 1e-15] = 0.0
    return AffineSubspace(comp.base, D, comp.sphere)


def _stratum_point(comp: AffineSubspace, offset: float) -> np.ndarray:
    D = comp.directions
    coeff = np.array([offset**j for j in range(D.shape[0])])
    if comp.sphere:
        x = coeff @ D
        return x / np.linalg.norm(x)
    return comp.base + offset * coeff @ D


@dataclass(frozen=True, eq=False)
class StratumChoice:
    point: np.ndarray
    isotropy: list
    component: AffineSubspace
    dim: int
    normal_free: bool
    normal_violations: list


def maximal_stratum_point(orb: DevelopableOrbifold, elements=None) -> StratumChoice:
    """Point on a fixed set of maximal dimension, with its full isotropy group.

    Raises :class:`NoSingularStratum` when no nonidentity element has a
    fixed point.
    """
    elements = orb.elements if elements is None else elements
    torus = orb.mod_lattice
    best = None
    for g in elements:
        if g.is_identity(mod_lattice=torus):
            continue
        for comp in _components(orb, g):
            dim = comp.geometric_dim
            if best is None or dim > best.geometric_dim:
                best = comp
    if best is None:
        raise NoSingularStratum("the action is free: the quotient is a manifold")
    comp = _canonical_directions(best, torus)
    for attempt in range(8):
        offset = STRATUM_OFFSET / (attempt + 1)
        p = _stratum_point(comp, offset) if comp.dim > 0 else comp.base
        if comp.sphere and comp.dim == 1:
            p = comp.directions[0].copy()
        gp = isotropy(elements, p, mod_lattice=torus)
        if torus:
            same = any(_same_torus_component(comp, c) for c in torus_fixed_components(gp))
            fixed_ok = same and all(c.dim <= comp.dim for c in torus_fixed_components(gp))
        else:
            fixed_ok = fixed_set(gp, sphere=True).dim == comp.dim
        if fixed_ok:
            break
    else:
        raise ClosedGeoError("could not place a generic point on the maximal stratum")
    if not torus:
        comp = AffineSubspace(comp.base, comp.directions, True)
    free, bad = _normal_freeness(comp, gp, torus)
    return StratumChoice(p, gp, comp, comp.geometric_dim, free, bad)


def _same_torus_component(a: AffineSubspace, b: AffineSubspace) -> bool:
    if a.dim != b.dim:
        return False
    d = a.base - b.base
    d = d - (d @ a.directions.T) @ a.directions
    return bool(np.max(np.abs(d - np.round(d))) < 1e-9)


def _normal_basis(comp: AffineSubspace) -> np.ndarray:
    n = comp.directions.shape[1]
    if comp.dim == 0:
        return np.eye(n)
    _, _, vt = np.linalg.svd(comp.directions)
    return vt[comp.dim:]


def _normal_freeness(comp: AffineSubspace, gp, torus: bool):
    """No nonidentity isotropy element may fix a nonzero normal vector."""
    Q = _normal_basis(comp)
    if comp.sphere and comp.dim == 0:
        Q = np.eye(comp.ambient_dim)
    bad = []
    for h in gp:
        if h.is_identity(mod_lattice=torus):
            continue
        M = Q @ h.A @ Q.T
        if Q.shape[0] and np.min(np.linalg.svd(M - np.eye(Q.shape[0]), compute_uv=False)) <= 1e-9:
            bad.append(h.word_str)
    return not bad, bad


# -- one reduction step --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReductionStep:
    point: np.ndarray
    isotropy: list
    fixed: AffineSubspace
    dim: int
    normalizer: list
    induced: DevelopableOrbifold
    kernel_size: int
    orientation_index: int
    normal_free: bool
    invariance_residual: float

    def embed(self, y) -> np.ndarray:
        """Intrinsic coordinates of the induced model -> coordinates of the parent model."""
        y = np.asarray(y, dtype=float)
        if self.fixed.sphere:
            return y @ self.fixed.directions
        return self.fixed.base + y @ self.fixed.directions

    def embed_vector(self, w) -> np.ndarray:
        return np.asarray(w, dtype=float) @ self.fixed.directions

    def to_json(self) -> dict:
        return {
            "point": self.point.tolist(),
            "isotropy": [g.to_json() for g in self.isotropy],
            "fixed_set": {
                "base": self.fixed.base.tolist(),
                "directions": self.fixed.directions.tolist(),
                "dim": self.dim,
            },
            "normalizer": [g.to_json() for g in self.normalizer],
            "kernel_size": self.kernel_size,
            "orientation_index": self.orientation_index,
            "normal_free": self.normal_free,
            "invariance_residual": self.invariance_residual,
            "induced": {"model": self.induced.model, "n": self.induced.n,
                        "group": [g.to_json() for g in self.induced.elements]},
        }


def _component_residual(comp: AffineSubspace, x, torus: bool) -> float:
    d = np.asarray(x) - comp.base
    off = d - (d @ comp.directions.T) @ comp.directions
    if torus:
        off = off - np.round(off)
    res = float(np.linalg.norm(off))
    if comp.sphere:
        res = max(res, abs(float(np.linalg.norm(x)) - 1.0))
    return res


def _restrict(orb: DevelopableOrbifold, comp: AffineSubspace, h: AffineIsometry) -> AffineIsometry:
    D = comp.directions
    A = D @ h.A @ D.T
    if orb.model == "sphere":
        return AffineIsometry(A, np.zeros(D.shape[0]), h.word)
    b = D @ (h.A @ comp.base + h.b - comp.base)
    return AffineIsometry(A, b - np.floor(b + 1e-12), h.word)


def reduce_once(orb: DevelopableOrbifold, rng=None) -> ReductionStep:
    """Restrict the normalizer of a maximal isotropy group to its fixed set."""
    if orb.model == "chart":
        raise NotImplementedError("automatic reduction needs an exact model (sphere or flat torus)")
    rng = np.random.default_rng(0) if rng is None else rng
    torus = orb.mod_lattice
    everything = orb.elements
    elements = orientation_subgroup(everything)
    choice = maximal_stratum_point(orb, elements)
    comp = choice.component
    H = normalizer(elements, choice.isotropy, mod_lattice=torus)
    samples = comp.sample(INVARIANCE_SAMPLES, rng) if comp.dim > 0 else comp.base[None, :]
    if comp.sphere and comp.dim == 1:
        samples = np.array([comp.directions[0], -comp.directions[0]])
    if torus:
        # keep the elements that map this component to itself (others permute components)
        H = [h for h in H if max(_component_residual(comp, x, True) for x in h.apply(samples)) <= INVARIANCE_TOL]
    residual = max(
        (_component_residual(comp, x, torus) for h in H for x in h.apply(samples)), default=0.0
    )
    restricted = []
    for h in H:
        r = _restrict(orb, comp, h)
        if not any(r.close_to(s, 1e-9, torus) for s in restricted):
            restricted.append(r)
    kernel = sum(1 for h in H if _restrict(orb, comp, h).is_identity(mod_lattice=torus))
    if orb.model == "sphere":
        induced = sphere_orbifold(comp.dim - 1, restricted)
    else:
        induced = torus_orbifold(comp.dim, restricted)
    return ReductionStep(
        choice.point, choice.isotropy, comp, choice.dim, H, induced, kernel,
        len(everything) // len(elements), choice.normal_free, residual,
    )


# -- the chain --------------------------------------------------------------------------


@dataclass
class ReductionChain:
    start: DevelopableOrbifold
    steps: list
    terminal: str
    final: DevelopableOrbifold

    @property
    def dims(self) -> list:
        return [self.start.n] + [s.dim for s in self.steps]

    def parity_ok(self) -> bool:
        """Odd-dimensional start implies every fixed set in the chain is odd-dimensional."""
        if self.start.n % 2 == 0:
            return True
        return all(d % 2 == 1 for d in self.dims)

    def dims_decrease(self) -> bool:
        d = self.dims
        return all(a > b for a, b in zip(d, d[1:]))

    def to_json(self) -> dict:
        return {
            "model": self.start.model,
            "n": self.start.n,
            "steps": [s.to_json() for s in self.steps],
            "dims": self.dims,
            "terminal": self.terminal,
        }


TERMINAL_MANIFOLD = "manifold"
TERMINAL_CIRCLE = "dimension 1"
TERMINAL_EVEN_ISOLATED = "even-dim isolated"


def reduction_chain(orb: DevelopableOrbifold, max_steps: int = 32) -> ReductionChain:
    steps = []
    current = orb
    for _ in range(max_steps):
        if current.n == 1:
            return ReductionChain(orb, steps, TERMINAL_CIRCLE, current)
        try:
            choice = maximal_stratum_point(current, orientation_subgroup(current.elements))
        except NoSingularStratum:
            return ReductionChain(orb, steps, TERMINAL_MANIFOLD, current)
        if choice.dim == 0:
            if current.n % 2 == 0:
                return ReductionChain(orb, steps, TERMINAL_EVEN_ISOLATED, current)
            raise ClosedGeoError("isolated singular point in odd dimension (orientation step failed)")
        step = reduce_once(current)
        steps.append(step)
        current = step.induced
    raise ClosedGeoError("reduction chain did not terminate")


def _terminal_geodesic(final: DevelopableOrbifold) -> ExactGeodesic:
    k = final.ambient_dim
    e = np.eye(k)
    if final.model == "sphere":
        return ExactGeodesic("sphere", np.zeros(k), e[0], e[1])
    return ExactGeodesic("flat_torus", np.zeros(k), e[0])


def lift(chain: ReductionChain, geo: ExactGeodesic) -> ExactGeodesic:
    """Push a geodesic of the final model through the chain inclusions."""
    for step in reversed(chain.steps):
        base = step.embed(geo.base) if not step.fixed.sphere else step.embed_vector(geo.base)
        geo = ExactGeodesic(
            geo.model, base, step.embed_vector(geo.e1),
            None if geo.e2 is None else step.embed_vector(geo.e2),
        )
    return geo


def set_invariance_residual(orb: DevelopableOrbifold, geo: ExactGeodesic, elements, samples: int = 32) -> float:
    """How far ``g`` maps the image of ``geo`` off itself, worst over ``elements``."""
    t = np.linspace(0.0, 1.0, samples, endpoint=False)
    pts = geo.evaluate(t)
    worst = 0.0
    if orb.model == "sphere":
        E = np.vstack([geo.e1, geo.e2])
        for g in elements:
            img = g.apply(pts)
            off = img - (img @ E.T) @ E
            worst = max(worst, float(np.max(np.linalg.norm(off, axis=1))))
        return worst
    w = geo.e1 / np.linalg.norm(geo.e1)
    for g in elements:
        img = g.apply(pts) - geo.base
        off = img - np.outer(img @ w, w)
        off = off - np.round(off)
        worst = max(worst, float(np.max(np.linalg.norm(off, axis=1))))
    return worst


@dataclass
class ReductionResult:
    status: str
    chain: ReductionChain
    geodesic: Optional[ExactGeodesic]
    length: float
    report: Optional[TwistedReport]
    group_invariance: float
    normalizer_invariance: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "length": self.length,
            "terminal": self.chain.terminal,
            "chain": self.chain.to_json(),
            "geodesic": None if self.geodesic is None else self.geodesic.to_json(),
            "twist": None if self.geodesic is None else self.geodesic.twist.to_json(),
            "position_residual": None if self.report is None else self.report.position_residual,
            "velocity_residual": None if self.report is None else self.report.velocity_residual,
            "geodesic_residual": None if self.report is None else self.report.geodesic_residual,
            "group_invariance": self.group_invariance,
            "normalizer_invariance": self.normalizer_invariance,
            "diagnostics": self.diagnostics,
        }


def find_closed_geodesic_via_reduction(orb: DevelopableOrbifold, tol: float = 1e-8) -> ReductionResult:
    """Reduce, take the known geodesic of the terminal space, lift and verify it."""
    chain = reduction_chain(orb)
    diagnostics = {
        "parity_ok": chain.parity_ok(),
        "dims_decrease": chain.dims_decrease(),
        "orientation_index": chain.steps[0].orientation_index if chain.steps else
        len(orb.elements) // len(orientation_subgroup(orb.elements)),
    }
    if diagnostics["orientation_index"] == 2:
        diagnostics["note"] = "orientation-reversing elements dropped; the geodesic lives on the orientation double cover"
    if chain.terminal == TERMINAL_EVEN_ISOLATED:
        diagnostics["suggestion"] = (
            "only isolated singular points remain in even dimension; run the shortening "
            "pipeline on a chart of the quotient away from the singular points"
        )
        return ReductionResult("reduced_to_even_isolated", chain, None, math.nan, None, math.nan, math.nan, diagnostics)
    geo = lift(chain, _terminal_geodesic(chain.final))
    report = is_twisted_closed_geodesic(orb, geo, geo.twist, tol)
    g_inv = set_invariance_residual(orb, geo, orb.elements)
    h_elems = chain.steps[0].normalizer if chain.steps else orb.elements
    h_inv = set_invariance_residual(orb, geo, h_elems)
    diagnostics["group_axioms_ok"] = all(
        check_group_axioms(s.normalizer, mod_lattice=orb.mod_lattice) for s in chain.steps
    )
    status = "found" if report.passed and h_inv <= tol else "verification_failed"
    return ReductionResult(status, chain, geo, geo.length, report, g_inv, h_inv, diagnostics)


def orbifold_from_config(cfg: dict) -> DevelopableOrbifold:
    from .manifold import from_config as chart_from_config
    from .symmetry import group_from_config

    model = cfg["model"]
    n = int(cfg["n"]) if "n" in cfg else None
    if model == "chart":
        chart = chart_from_config(cfg["manifold"])
        group = group_from_config(cfg["group"], chart.dim)
        return DevelopableOrbifold("chart", chart.dim, group, chart)
    if n is None or n < 1:
        raise ConfigError("orbifold model needs a positive dimension 'n'")
    ambient = n + 1 if model == "sphere" else n
    group_cfg = cfg.get("group") or {"kind": "finite", "generators": [{"A": np.eye(ambient).tolist(), "b": [0.0] * ambient}]}
    group = group_from_config(group_cfg, ambient, mod_lattice=(model == "flat_torus"))
    return DevelopableOrbifold(model, n, group)

