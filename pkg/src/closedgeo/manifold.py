"""Riemannian metrics on global coordinate charts.

A :class:`MetricChart` evaluates its metric on batches of points (arrays of
shape ``(..., n)``), which is what the geodesic solver consumes.  The public
single-point helpers :func:`metric_at` and :func:`christoffel_at` add the
domain checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError
from .expression import (
    COORDINATE_NAMES,
    BinOp,
    Call,
    Expression,
    Negate,
    Number,
    Pi,
    Power,
    Variable,
    compile_expression,
    differentiate,
    evaluate,
    parse_expression,
)

MetricFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class MetricChart:
    """An ``n``-dimensional coordinate domain carrying a metric tensor field.

    ``domain`` is an ``(n, 2)`` array of closed coordinate bounds (infinite
    entries allowed) or ``None`` for all of n-space.  ``injectivity_radius_lb``
    is the radius below which minimizing geodesics are unique; it is always
    supplied, never estimated.
    """

    dim: int
    metric_fn: MetricFn
    injectivity_radius_lb: float
    fd_step: float = 1e-5
    domain: Optional[np.ndarray] = None
    name: str = "custom"
    christoffel_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constant_metric: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)
    accel_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if not self.injectivity_radius_lb > 0:
            raise ValueError("injectivity_radius_lb must be positive")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.domain is not None:
            dom = np.asarray(self.domain, dtype=float)
            if dom.shape != (self.dim, 2) or np.any(dom[:, 0] >= dom[:, 1]):
                raise ValueError("domain must be an (n, 2) array of increasing bounds")
            object.__setattr__(self, "domain", dom)

    @property
    def r(self) -> float:
        return self.injectivity_radius_lb

    @property
    def is_flat(self) -> bool:
        """True when the metric is constant, so geodesics are straight lines."""
        return self.constant_metric is not None

    def metric(self, points) -> np.ndarray:
        """Metric matrices at a batch of points, shape ``(..., n, n)``."""
        points = np.asarray(points, dtype=float)
        return self.metric_fn(points)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        finite = np.all(np.isfinite(points), axis=-1)
        if self.domain is None:
            return finite
        lo = self.domain[:, 0] + margin
        hi = self.domain[:, 1] - margin
        return finite & np.all((points >= lo) & (points <= hi), axis=-1)

    def christoffel(self, points) -> np.ndarray:
        """Christoffel symbols ``G[..., i, j, k]`` at a batch of points."""
        points = np.asarray(points, dtype=float)
        if self.constant_metric is not None:
            return np.zeros(points.shape + (self.dim, self.dim))
        if self.christoffel_fn is not None:
            return self.christoffel_fn(points)
        return christoffel_fd(self, points)

    def geodesic_accel(self, points, velocities) -> np.ndarray:
        """``-Gamma^i_jk w^j w^k``, the right-hand side of the geodesic equation."""
        if self.accel_fn is not None:
            return self.accel_fn(points, velocities)
        return -np.einsum("...ijk,...j,...k->...i", self.christoffel(points), velocities, velocities)

    def norm(self, points, vectors) -> np.ndarray:
        g = self.metric(points)
        vectors = np.asarray(vectors, dtype=float)
        sq = np.einsum("...i,...ij,...j->...", vectors, g, vectors)
        return np.sqrt(np.maximum(sq, 0.0))

    def inner(self, points, a, b) -> np.ndarray:
        return np.einsum("...i,...ij,...j->...", a, self.metric(points), b)


def christoffel_fd(chart: MetricChart, points, h: float | None = None) -> np.ndarray:
    """Christoffel symbols from central differences of the metric (step ``h``)."""
    points = np.asarray(points, dtype=float)
    n = chart.dim
    h = chart.fd_step if h is None else h
    g = chart.metric(points)
    dg = np.empty(points.shape[:-1] + (n, n, n))
    for l in range(n):
        step = np.zeros(n)
        step[l] = h
        dg[..., l, :, :] = (chart.metric(points + step) - chart.metric(points - step)) / (2 * h)
    try:
        ginv = np.linalg.inv(g)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular metric while computing Christoffel symbols") from exc
    # first kind: [jk, l] = (d_j g_lk + d_k g_lj - d_l g_jk) / 2
    first = 0.5 * (
        np.einsum("...jlk->...ljk", dg) + np.einsum("...klj->...ljk", dg) - dg
    )
    gamma = np.einsum("...il,...ljk->...ijk", ginv, first)
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def _as_point(chart: MetricChart, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (chart.dim,):
        raise ValueError(f"expected a point with {chart.dim} coordinates, got shape {p.shape}")
    return p


def metric_at(chart: MetricChart, p) -> np.ndarray:
    """Metric matrix at a single chart point."""
    p = _as_point(chart, p)
    if not chart.contains(p):
        raise DomainError(f"point {p.tolist()} is outside the domain of chart {chart.name!r}")
    return chart.metric(p)


def christoffel_at(chart: MetricChart, p, method: str = "auto") -> np.ndarray:
    """Christoffel symbols ``Gamma[i, j, k]`` at ``p``.

    ``method`` is ``"auto"`` (analytic when the chart provides it), ``"fd"``
    (always central differences) or ``"analytic"``.
    """
    p = _as_point(chart, p)
    if not chart.contains(p, margin=chart.fd_step):
        raise DomainError(f"point {p.tolist()} has no finite-difference room in chart {chart.name!r}")
    g = chart.metric(p)
    if not np.all(np.isfinite(g)) or abs(np.linalg.det(g)) < 1e-300:
        raise NumericError(f"singular metric at {p.tolist()}")
    if method == "fd":
        return christoffel_fd(chart, p)
    if method == "analytic":
        if chart.christoffel_fn is None and chart.constant_metric is None:
            raise ValueError(f"chart {chart.name!r} has no analytic Christoffel symbols")
        return chart.christoffel(p)
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    return chart.christoffel(p)


def sample_points(chart: MetricChart, count: int, rng, box: float = 2.0, margin: float = 0.0):
    """Uniform random points inside the domain (infinite sides clipped to ``box``)."""
    n = chart.dim
    lo = np.full(n, -box)
    hi = np.full(n, box)
    if chart.domain is not None:
        lo = np.where(np.isfinite(chart.domain[:, 0]), chart.domain[:, 0] + margin, lo)
        hi = np.where(np.isfinite(chart.domain[:, 1]), chart.domain[:, 1] - margin, hi)
    return rng.uniform(lo, hi, size=(count, n))


def check_positive_definite(chart: MetricChart, points) -> tuple[float, float]:
    """Return (worst asymmetry, smallest eigenvalue) over ``points``."""
    g = chart.metric(np.asarray(points, dtype=float))
    asym = float(np.max(np.abs(g - np.swapaxes(g, -1, -2))))
    eig = np.linalg.eigvalsh(g)
    return asym, float(np.min(eig))


# -- built-in catalog ---------------------------------------------------------


def euclidean(n: int, r: float = 1.0, fd_step: float = 1e-5) -> MetricChart:
    eye = np.eye(n)
    return MetricChart(
        dim=n,
        metric_fn=lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (n, n)).copy(),
        injectivity_radius_lb=r,
        fd_step=fd_step,
        name=f"euclidean {n}",
        constant_metric=eye,
        params={"type": "euclidean", "dim": n},
    )


def flat(g0, r: float = 1.0, fd_step: float = 1e-5) -> MetricChart:
    """Constant metric ``g0`` (symmetric positive definite)."""
    g0 = np.array(g0, dtype=float)
    n = g0.shape[0]
    if g0.shape != (n, n) or not np.array_equal(g0, g0.T):
        raise ValueError("flat metric matrix must be square and symmetric")
    if np.min(np.linalg.eigvalsh(g0)) <= 0:
        raise ValueError("flat metric matrix must be positive definite")
    return MetricChart(
        dim=n,
        metric_fn=lambda x: np.broadcast_to(g0, np.shape(x)[:-1] + (n, n)).copy(),
        injectivity_radius_lb=r,
        fd_step=fd_step,
        name="flat",
        constant_metric=g0,
        params={"type": "flat", "dim": n, "G0": g0.tolist()},
    )


def sphere_chart(R: float = 1.0, delta: float = 1e-3, r: float = 1.0, fd_step: float = 1e-5) -> MetricChart:
    """Polar chart ``(theta, phi)`` of the round sphere of radius ``R``.

    ``theta`` is guarded to ``[delta, pi - delta]``; ``phi`` is an unwrapped
    coordinate, so a full latitude loop closes up to the deck translation
    ``phi -> phi + 2 pi``.
    """

    def metric_fn(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = R * R
        g[..., 1, 1] = (R * np.sin(x[..., 0])) ** 2
        return g

    def christoffel_fn(x):
        x = np.asarray(x, dtype=float)
        th = x[..., 0]
        gam = np.zeros(x.shape[:-1] + (2, 2, 2))
        gam[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
        cot = np.cos(th) / np.sin(th)
        gam[..., 1, 0, 1] = cot
        gam[..., 1, 1, 0] = cot
        return gam

    def accel_fn(x, w):
        th = x[..., 0]
        s, c = np.sin(th), np.cos(th)
        out = np.empty_like(w)
        out[..., 0] = s * c * w[..., 1] ** 2
        out[..., 1] = -2.0 * (c / s) * w[..., 0] * w[..., 1]
        return out

    return MetricChart(
        dim=2,
        metric_fn=metric_fn,
        injectivity_radius_lb=r,
        fd_step=fd_step,
        domain=np.array([[delta, np.pi - delta], [-np.inf, np.inf]]),
        name=f"sphere_chart R={R}",
        christoffel_fn=christoffel_fn,
        accel_fn=accel_fn,
        params={"type": "sphere_chart", "R": R, "delta": delta},
    )


def _tree(entry) -> Expression:
    return parse_expression(entry) if isinstance(entry, str) else entry


def _compile(entry, n: int) -> Callable[[np.ndarray], np.ndarray]:
    if callable(entry) and not isinstance(entry, (str, int, float)):
        return entry
    if isinstance(entry, (int, float)):
        value = float(entry)
        return lambda x: np.full(np.shape(x)[:-1], value)
    fn = compile_expression(_tree(entry), COORDINATE_NAMES[:n])

    def wrapped(x):
        out = fn(*(x[..., i] for i in range(n)))
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)[:-1]).copy()

    return wrapped


def conformal(lam, n: int = 2, r: float = 0.5, fd_step: float = 1e-5) -> MetricChart:
    """Metric ``exp(2 lam(x)) * I``; ``lam`` is an expression string or callable.

    For expression input the Christoffel symbols are analytic,
    ``G^i_jk = d_ij dlam_k + d_ik dlam_j - d_jk dlam_i``, with the gradient
    obtained by symbolic differentiation.
    """
    lam_fn = _compile(lam, n)
    eye = np.eye(n)

    def metric_fn(x):
        x = np.asarray(x, dtype=float)
        scale = np.exp(2.0 * lam_fn(x))
        return scale[..., None, None] * eye

    symbolic = isinstance(lam, (str, Number, Pi, Variable, Negate, BinOp, Power, Call))
    if symbolic:
        tree = _tree(lam)
        grads = [_compile(differentiate(tree, COORDINATE_NAMES[i]), n) for i in range(n)]

        def christoffel_fn(x):
            x = np.asarray(x, dtype=float)
            dl = np.stack([gfn(x) for gfn in grads], axis=-1)
            gam = np.einsum("ij,...k->...ijk", eye, dl)
            gam = gam + np.swapaxes(gam, -1, -2)
            gam -= np.einsum("jk,...i->...ijk", eye, dl)
            return gam

        raw = [compile_expression(differentiate(tree, COORDINATE_NAMES[i]), COORDINATE_NAMES[:n]) for i in range(n)]

        def accel_fn(x, w):
            cols = [x[..., i] for i in range(n)]
            dl = [np.asarray(f(*cols), dtype=float) for f in raw]
            dot = dl[0] * w[..., 0]
            sq = w[..., 0] * w[..., 0]
            for i in range(1, n):
                dot = dot + dl[i] * w[..., i]
                sq = sq + w[..., i] * w[..., i]
            out = np.empty(np.broadcast_shapes(np.shape(x), np.shape(w)))
            for i in range(n):
                out[..., i] = sq * dl[i] - 2.0 * dot * w[..., i]
            return out

    label = lam if isinstance(lam, str) else getattr(lam, "__name__", "lambda")
    return MetricChart(
        dim=n,
        metric_fn=metric_fn,
        injectivity_radius_lb=r,
        fd_step=fd_step,
        name=f"conformal {label}",
        christoffel_fn=christoffel_fn if symbolic else None,
        accel_fn=accel_fn if symbolic else None,
        params={"type": "conformal", "dim": n, "lambda": label},
    )


def custom(entries: Sequence[Sequence], r: float, fd_step: float = 1e-5, domain=None) -> MetricChart:
    """Metric given entrywise by expressions in ``x1..xn``.

    Only the upper triangle is evaluated; the lower one mirrors it, so the
    matrix is symmetric by construction.
    """
    n = len(entries)
    if any(len(row) != n for row in entries):
        raise ValueError("metric entries must form a square array")
    fns = {(i, j): _compile(entries[i][j], n) for i in range(n) for j in range(i, n)}

    def metric_fn(x):
        x = np.asarray(x, dtype=float)
        g = np.empty(x.shape[:-1] + (n, n))
        for (i, j), fn in fns.items():
            g[..., i, j] = fn(x)
            if i != j:
                g[..., j, i] = g[..., i, j]
        return g

    return MetricChart(
        dim=n,
        metric_fn=metric_fn,
        injectivity_radius_lb=r,
        fd_step=fd_step,
        domain=domain,
        name="custom",
        params={"type": "custom", "dim": n},
    )


DEFAULT_CONFORMAL_LAMBDA = "0.1*sin(2*pi*x1)*sin(2*pi*x2)"


def from_config(cfg: dict) -> MetricChart:
    """Build a chart from the JSON metric object."""
    kind = cfg["type"]
    r = float(cfg["r"])
    h = float(cfg.get("fd_step", 1e-5))
    if kind == "euclidean":
        return euclidean(int(cfg["dim"]), r=r, fd_step=h)
    if kind == "flat":
        entries = cfg["entries"]
        g0 = [[float(parse_value(e)) for e in row] for row in entries]
        return flat(g0, r=r, fd_step=h)
    if kind == "sphere_chart":
        return sphere_chart(R=float(cfg.get("R", 1.0)), delta=float(cfg.get("delta", 1e-3)), r=r, fd_step=h)
    if kind == "conformal":
        return conformal(cfg.get("lambda", DEFAULT_CONFORMAL_LAMBDA), n=int(cfg.get("dim", 2)), r=r, fd_step=h)
    if kind == "custom":
        domain = cfg.get("domain")
        return custom(cfg["entries"], r=r, fd_step=h, domain=None if domain is None else np.array(domain, dtype=float))
    raise ValueError(f"unknown metric type {kind!r}")


def parse_value(entry) -> float:
    """A numeric literal or a constant expression (no variables)."""
    if isinstance(entry, (int, float)):
        return float(entry)
    return float(evaluate(parse_expression(entry, variables=()), {}))
