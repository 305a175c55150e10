"""Exponential map (fixed-step RK4) and local boundary-value solver (Newton shooting).

Everything here is batched: the private ``_*_batch`` kernels take arrays of
shape ``(B, n)`` and treat each row independently, so a row's result does
not depend on which other rows share its batch.  The public functions wrap
single points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConnectivityError, DomainError
from .manifold import MetricChart

TOL_BVP = 1e-10
MAX_NEWTON = 50
MAX_HALVINGS = 20
MIN_STEPS = 16


def default_steps(speed: float, r: float, stiffness: float = 0.0) -> int:
    """RK4 step count, rounded up to even.

    ``max(16, ceil(64 |v|_g / r + 128 * stiffness))`` where ``stiffness`` is
    ``|Gamma_p(v, v)| / |v|`` in coordinates; the second term is zero on
    flat charts and keeps polar charts accurate near their guards.
    """
    steps = max(MIN_STEPS, math.ceil(64.0 * speed / r + 128.0 * stiffness))
    return steps + (steps % 2)


def steps_for(chart: MetricChart, p, v) -> np.ndarray:
    """Vectorised :func:`default_steps` for rows of ``p`` and ``v``."""
    p = np.asarray(p, dtype=float).reshape(-1, chart.dim)
    v = np.asarray(v, dtype=float).reshape(-1, chart.dim)
    speed = chart.norm(p, v)
    if chart.is_flat:
        stiff = np.zeros(p.shape[0])
    else:
        acc = chart.geodesic_accel(p, v)
        vmax = np.max(np.abs(v), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            stiff = np.where(vmax > 0, np.max(np.abs(acc), axis=1) / vmax, 0.0)
    return np.array([default_steps(a, chart.r, b) for a, b in zip(speed, stiff)], dtype=int)


@dataclass(frozen=True)
class SolverParams:
    """Knobs of the boundary-value solver, threaded through loops and shortening."""

    tol_bvp: float = TOL_BVP
    max_newton: int = MAX_NEWTON
    steps: Optional[int] = None


def _accel(chart: MetricChart, x, w):
    return chart.geodesic_accel(x, w)


def _rk4_step(chart: MetricChart, x, w, h):
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[..., None]
    k1x, k1w = w, _accel(chart, x, w)
    k2x = w + 0.5 * h * k1w
    k2w = _accel(chart, x + 0.5 * h * k1x, k2x)
    k3x = w + 0.5 * h * k2w
    k3w = _accel(chart, x + 0.5 * h * k2x, k3x)
    k4x = w + h * k3w
    k4w = _accel(chart, x + h * k3x, k4x)
    x_new = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    w_new = w + (h / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
    return x_new, w_new


def _integrate(chart: MetricChart, p, v, steps, dense: bool = False):
    """RK4-integrate a batch; row ``i`` takes ``steps[i]`` steps of size ``1/steps[i]``.

    Returns ``(x_end, w_end, exit_param, xs, ws)``.  ``exit_param`` is NaN for
    rows that stayed inside the domain; exited rows are frozen at their last
    interior state.  Dense states have shape ``(B, max(steps) + 1, n)`` and
    rows with fewer steps are padded with their final state.  Every operation
    is row-wise, so a row's result does not depend on its batch mates.
    """
    x = np.array(p, dtype=float)
    w = np.array(v, dtype=float)
    batch = x.shape[0]
    steps = np.broadcast_to(np.asarray(steps, dtype=int), (batch,))
    exit_param = np.full(batch, np.nan)
    smax = int(steps.max()) if batch else 0
    if chart.is_flat:
        if dense:
            frac = np.minimum(np.arange(smax + 1)[None, :] / steps[:, None], 1.0)
            xs = x[:, None, :] + frac[..., None] * w[:, None, :]
            ws = np.repeat(w[:, None, :], smax + 1, axis=1)
        else:
            xs = ws = None
        x_end = x + w
        exit_param[~chart.contains(x_end)] = 1.0
        return x_end, w.copy(), exit_param, xs, ws
    h = 1.0 / steps
    if dense:
        xs = np.empty((batch, smax + 1, chart.dim))
        ws = np.empty_like(xs)
        xs[:, 0], ws[:, 0] = x, w
    alive = np.ones(batch, dtype=bool)
    uniform = bool(np.all(steps == smax))
    for s in range(smax):
        run = alive if uniform else alive & (steps > s)
        if run.all():
            x_new, w_new = _rk4_step(chart, x, w, h)
        else:
            x_new, w_new = x.copy(), w.copy()
            if run.any():
                x_new[run], w_new[run] = _rk4_step(chart, x[run], w[run], h[run])
        left = run & ~chart.contains(x_new)
        if left.any():
            exit_param[left] = (s + 1) * h[left]
            alive &= ~left
            x_new[left], w_new[left] = x[left], w[left]
        x, w = x_new, w_new
        if dense:
            xs[:, s + 1], ws[:, s + 1] = x, w
    if not dense:
        xs = ws = None
    return x, w, exit_param, xs, ws


def _endpoints(chart, p, v, steps):
    xe, _, ex, _, _ = _integrate(chart, p, v, steps)
    return xe, ex


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    """Constant-speed geodesic ``[0, 1] -> M`` with cached RK4 states."""

    chart: MetricChart
    start: np.ndarray
    initial_velocity: np.ndarray
    steps: int
    states_x: np.ndarray
    states_v: np.ndarray

    @property
    def endpoint(self) -> np.ndarray:
        return self.states_x[-1]

    @property
    def end_velocity(self) -> np.ndarray:
        return self.states_v[-1]

    @property
    def length(self) -> float:
        return float(self.chart.norm(self.start, self.initial_velocity))

    @property
    def energy(self) -> float:
        return 0.5 * self.length**2

    def _state(self, t: float):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"parameter {t} outside [0, 1]")
        if t == 1.0:
            return self.states_x[-1], self.states_v[-1]
        j = int(math.floor(t * self.steps))
        dt = t - j / self.steps
        x, w = self.states_x[j], self.states_v[j]
        if dt == 0.0:
            return x, w
        xn, wn = _rk4_step(self.chart, x[None], w[None], dt)
        return xn[0], wn[0]

    def evaluate(self, t: float) -> np.ndarray:
        return self._state(t)[0].copy()

    def velocity_at(self, t: float) -> np.ndarray:
        return self._state(t)[1].copy()

    def midpoint(self) -> np.ndarray:
        return self.evaluate(0.5)

    def speeds(self) -> np.ndarray:
        """Metric speed at every cached state."""
        return self.chart.norm(self.states_x, self.states_v)


class SegmentBatch:
    """Many geodesic segments solved together (the output of a batched connect)."""

    def __init__(self, chart, p, v, steps, xs, ws):
        self.chart = chart
        self.p = p
        self.v = v
        self.steps = steps
        self.xs = xs
        self.ws = ws
        self.lengths = chart.norm(p, v)

    def __len__(self):
        return self.p.shape[0]

    def segment(self, i: int) -> GeodesicSegment:
        s = int(self.steps[i])
        return GeodesicSegment(
            self.chart, self.p[i].copy(), self.v[i].copy(), s,
            self.xs[i, : s + 1].copy(), self.ws[i, : s + 1].copy(),
        )

    def evaluate(self, t: float) -> np.ndarray:
        """Positions at parameter ``t`` for every row."""
        rows = np.arange(len(self))
        if t == 1.0:
            return self.xs[rows, self.steps].copy()
        j = np.floor(t * self.steps).astype(int)
        dt = t - j / self.steps
        x, w = self.xs[rows, j], self.ws[rows, j]
        out = x.copy()
        move = dt != 0.0
        if move.any():
            out[move], _ = _rk4_step(self.chart, x[move], w[move], dt[move])
        return out

    def end_velocities(self) -> np.ndarray:
        return self.ws[np.arange(len(self)), self.steps].copy()


def exp_map(chart: MetricChart, p, v, steps: Optional[int] = None) -> GeodesicSegment:
    """Geodesic ``t -> exp_p(t v)`` for ``t`` in ``[0, 1]``.

    Raises :class:`DomainError` (with ``exit_parameter``) when the trajectory
    leaves the chart domain.
    """
    p = np.asarray(p, dtype=float).reshape(1, chart.dim)
    v = np.asarray(v, dtype=float).reshape(1, chart.dim)
    if not chart.contains(p[0]):
        raise DomainError(f"start point {p[0].tolist()} outside chart domain")
    if steps is None:
        steps = int(steps_for(chart, p, v)[0])
    if steps < 1:
        raise ValueError("steps must be positive")
    _, _, exit_param, xs, ws = _integrate(chart, p, v, np.array([int(steps)]), dense=True)
    if not np.isnan(exit_param[0]):
        raise DomainError(
            f"geodesic left the chart domain at parameter {exit_param[0]:.6g}", float(exit_param[0])
        )
    return GeodesicSegment(chart, p[0].copy(), v[0].copy(), int(steps), xs[0], ws[0])


def connect_batch(
    chart: MetricChart,
    p,
    q,
    tol: float = TOL_BVP,
    max_newton: int = MAX_NEWTON,
    steps=None,
):
    """Shoot geodesics from each row of ``p`` to the matching row of ``q``.

    Returns ``(batch, status)``; ``status`` is 0 on success, 1 when Newton
    did not converge and 2 on a domain exit.  Failed rows still carry their
    last iterate so callers can report diagnostics.

    Unless ``steps`` is fixed, each row's RK4 step count is taken from the
    speed of its *converged* velocity, so ``connect(p, exp_map(p, v).endpoint)``
    reuses exactly the discretization of ``exp_map(p, v)``.
    """
    p = np.array(p, dtype=float).reshape(-1, chart.dim)
    q = np.array(q, dtype=float).reshape(-1, chart.dim)
    batch = p.shape[0]
    v = q - p
    status = np.zeros(batch, dtype=int)
    if chart.is_flat:
        return _dense_batch(chart, p, v, np.ones(batch, dtype=int)), status
    if batch == 0:
        return _dense_batch(chart, p, v, np.ones(0, dtype=int)), status

    def choose(rows, vel):
        if steps is not None:
            return np.full(rows.size, int(steps), dtype=int)
        return steps_for(chart, p[rows], vel)

    steps_arr = choose(np.arange(batch), v)
    status[~chart.contains(p) | ~chart.contains(q)] = 2
    same = np.all(p == q, axis=1)
    thresh = tol * (1.0 + np.max(np.abs(q), axis=1))
    todo = np.flatnonzero(~same & (status == 0))
    for attempt in range(5):
        if todo.size == 0:
            break
        _newton_solve(chart, p, q, v, steps_arr, status, thresh, todo, max_newton)
        if steps is not None:
            break
        ok = todo[status[todo] == 0]
        new_steps = choose(ok, v[ok])
        changed = new_steps != steps_arr[ok]
        if attempt == 3:
            # settle oscillating rows on the larger count
            new_steps = np.maximum(new_steps, steps_arr[ok])
        steps_arr[ok] = new_steps
        todo = ok[changed]
    return _dense_batch(chart, p, v, steps_arr), status


def _newton_solve(chart, p, q, v, steps_arr, status, thresh, rows, max_newton):
    """Damped Newton iteration on ``rows`` (``v`` and ``status`` updated in place)."""
    xe, ex = _endpoints(chart, p[rows], v[rows], steps_arr[rows])
    resid = np.max(np.abs(xe - q[rows]), axis=1)
    exited = ~np.isnan(ex)
    status[rows[exited]] = 2
    xend = np.full_like(p, np.nan)
    xend[rows] = xe
    res_all = np.full(p.shape[0], np.inf)
    res_all[rows] = resid
    active = rows[~exited]
    jacs = np.full((p.shape[0], chart.dim, chart.dim), np.nan)
    for _ in range(max_newton):
        active = active[(res_all[active] > thresh[active]) & (status[active] == 0)]
        if active.size == 0:
            break
        _newton_update(chart, p, q, v, steps_arr, xend, res_all, status, active, jacs)
    unconverged = rows[(res_all[rows] > thresh[rows]) & (status[rows] == 0)]
    status[unconverged] = 1
    _polish(chart, p, q, v, steps_arr, res_all, status, rows, jacs)


def _polish(chart, p, q, v, steps_arr, resid, status, rows, jacs):
    """One chord step with the last Jacobian on converged rows.

    Newton is quadratic, so a residual just under ``tol`` drops to roundoff
    for the price of a single integration; kept only where it helps.
    """
    idx = rows[(status[rows] == 0) & np.isfinite(jacs[rows, 0, 0])]
    if idx.size == 0:
        return
    xe, _ = _endpoints(chart, p[idx], v[idx], steps_arr[idx])
    try:
        dv = np.linalg.solve(jacs[idx], (q[idx] - xe)[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return
    trial = v[idx] + dv
    xt, ex = _endpoints(chart, p[idx], trial, steps_arr[idx])
    r_new = np.max(np.abs(xt - q[idx]), axis=1)
    better = np.isnan(ex) & (r_new < np.max(np.abs(xe - q[idx]), axis=1))
    v[idx[better]] = trial[better]
    resid[idx[better]] = r_new[better]


def _newton_update(chart, p, q, v, steps_arr, xend, resid, status, idx, jacs):
    """One damped Newton step for rows ``idx`` (arrays updated in place)."""
    n = chart.dim
    pa, qa, va, sa = p[idx], q[idx], v[idx], steps_arr[idx]
    base = xend[idx]
    eps = 1e-7 * np.maximum(1.0, np.max(np.abs(va), axis=1))
    # all n finite-difference columns in one batched integration
    vp = np.repeat(va[None], n, axis=0)
    vp[np.arange(n), :, np.arange(n)] += eps
    xe, _ = _endpoints(chart, np.tile(pa, (n, 1)), vp.reshape(-1, n), np.tile(sa, n))
    jac = ((xe.reshape(n, idx.size, n) - base) / eps[:, None]).transpose(1, 2, 0)
    jacs[idx] = jac
    rhs = qa - base
    dv = np.empty_like(va)
    for k in range(idx.size):
        try:
            dv[k] = np.linalg.solve(jac[k], rhs[k])
        except np.linalg.LinAlgError:
            dv[k] = np.linalg.lstsq(jac[k], rhs[k], rcond=None)[0]
    old = resid[idx]
    ends = base.copy()
    lam = np.ones(idx.size)
    pending = np.ones(idx.size, dtype=bool)
    for _ in range(MAX_HALVINGS + 1):
        rows = np.flatnonzero(pending)
        trial = va[rows] + lam[rows, None] * dv[rows]
        xe, ex = _endpoints(chart, pa[rows], trial, sa[rows])
        r_new = np.max(np.abs(xe - qa[rows]), axis=1)
        r_new[~np.isnan(ex) | ~np.isfinite(r_new)] = np.inf
        accept = r_new < old[rows]
        acc_rows = rows[accept]
        va[acc_rows] = trial[accept]
        old[acc_rows] = r_new[accept]
        ends[acc_rows] = xe[accept]
        pending[acc_rows] = False
        if not pending.any():
            break
        lam[pending] *= 0.5
    v[idx] = va
    resid[idx] = old
    xend[idx] = ends
    status[idx[pending]] = 1


def _dense_batch(chart, p, v, steps_arr) -> SegmentBatch:
    _, _, _, xs, ws = _integrate(chart, p, v, steps_arr, dense=True)
    return SegmentBatch(chart, p, v, steps_arr, xs, ws)


def raise_for_status(status, p, q) -> None:
    """Turn the first failed row of a batched connect into an exception."""
    bad = np.flatnonzero(status)
    if bad.size == 0:
        return
    i = int(bad[0])
    if status[i] == 2:
        raise DomainError(f"geodesic from {p[i].tolist()} toward {q[i].tolist()} left the chart domain")
    raise ConnectivityError(
        f"Newton shooting from {p[i].tolist()} to {q[i].tolist()} did not converge "
        "(points may be at least the injectivity radius apart)"
    )


def connect(
    chart: MetricChart,
    p,
    q,
    tol: float = TOL_BVP,
    max_newton: int = MAX_NEWTON,
    steps: Optional[int] = None,
) -> GeodesicSegment:
    """Minimizing geodesic from ``p`` to ``q`` (assumes ``d(p, q) < r``)."""
    p = np.asarray(p, dtype=float).reshape(1, chart.dim)
    q = np.asarray(q, dtype=float).reshape(1, chart.dim)
    batch, status = connect_batch(chart, p, q, tol=tol, max_newton=max_newton, steps=steps)
    raise_for_status(status, p, q)
    return batch.segment(0)


def evaluate(seg: GeodesicSegment, t: float) -> np.ndarray:
    return seg.evaluate(t)


def midpoint(seg: GeodesicSegment) -> np.ndarray:
    return seg.midpoint()


def distance(chart: MetricChart, p, q, **kwargs) -> float:
    """Local geodesic distance (valid below the injectivity radius)."""
    return connect(chart, p, q, **kwargs).length
