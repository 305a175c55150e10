"""Isometric group actions by affine maps.

Finite groups are enumerated outright; deck groups (lattice translations,
glides) are only ever used through their generators and a fundamental box.
Subgroups are plain lists of :class:`AffineIsometry`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .affine import AffineIsometry
from .errors import ConfigError, GroupOverflowError, RenormalizationError
from .manifold import MetricChart, sample_points

DEDUP_TOL = 1e-9
SVD_CUTOFF = 1e-9


def _canonical(g: AffineIsometry, mod_lattice: bool) -> AffineIsometry:
    if not mod_lattice:
        return g
    b = g.b - np.floor(g.b + DEDUP_TOL)
    return AffineIsometry(g.A, b, g.word)


@dataclass(frozen=True, eq=False)
class IsometryGroup:
    generators: tuple
    kind: str = "finite"
    fundamental_domain: Optional[np.ndarray] = None
    mod_lattice: bool = False
    max_elements: int = 1000
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("finite", "deck"):
            raise ValueError(f"unknown group kind {self.kind!r}")
        gens = tuple(self.generators)
        if not gens:
            raise ValueError("a group needs at least one generator")
        dims = {g.dim for g in gens}
        if len(dims) != 1:
            raise ValueError("generators act on spaces of different dimension")
        object.__setattr__(self, "generators", gens)
        if self.fundamental_domain is not None:
            box = np.array(self.fundamental_domain, dtype=float)
            if box.shape != (self.dim, 2) or np.any(box[:, 0] >= box[:, 1]):
                raise ValueError("fundamental_domain must be an (n, 2) box with lo < hi")
            object.__setattr__(self, "fundamental_domain", box)

    @property
    def dim(self) -> int:
        return self.generators[0].dim

    @property
    def elements(self) -> list:
        if self.kind != "finite":
            raise TypeError("deck groups are infinite and cannot be enumerated")
        if "elements" not in self._cache:
            self._cache["elements"] = enumerate_group(
                self.generators, self.max_elements, mod_lattice=self.mod_lattice
            )
        return self._cache["elements"]

    def order(self) -> int:
        return len(self.elements)

    def identity(self) -> AffineIsometry:
        return AffineIsometry.identity(self.dim)


def trivial_group(n: int) -> IsometryGroup:
    return IsometryGroup((AffineIsometry.identity(n),), "finite")


# -- isometry check -----------------------------------------------------------


@dataclass(frozen=True)
class IsometryReport:
    passed: bool
    worst: float
    entry: tuple
    point: np.ndarray
    samples: int


def verify_isometry(
    chart: MetricChart,
    g: AffineIsometry,
    sample_count: int = 50,
    tol: float = 1e-9,
    rng=None,
    box: float = 2.0,
) -> IsometryReport:
    """Check ``A^T G(A p + b) A = G(p)`` at random chart points.

    ``entry`` is the (row, col) index, 0-based, of the worst violation.
    Samples whose image leaves the chart domain are skipped.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    pts = sample_points(chart, sample_count, rng, box=box, margin=1e-6)
    imgs = g.apply(pts)
    keep = chart.contains(imgs)
    pts, imgs = pts[keep], imgs[keep]
    if pts.shape[0] == 0:
        return IsometryReport(False, math.inf, (0, 0), np.full(chart.dim, np.nan), 0)
    pulled = np.einsum("ji,pjk,kl->pil", g.A, chart.metric(imgs), g.A)
    diff = np.abs(pulled - chart.metric(pts))
    flat_idx = int(np.argmax(diff))
    p_idx, i, j = np.unravel_index(flat_idx, diff.shape)
    worst = float(diff[p_idx, i, j])
    return IsometryReport(worst <= tol, worst, (int(i), int(j)), pts[p_idx], int(pts.shape[0]))


def verify_orthogonal(g: AffineIsometry, tol: float = 1e-12) -> float:
    """Residual of ``g`` as an isometry of the round sphere in ambient space."""
    return float(max(np.max(np.abs(g.A.T @ g.A - np.eye(g.dim))), np.max(np.abs(g.b), initial=0.0)))


# -- finite groups ------------------------------------------------------------


def _index_of(g: AffineIsometry, elements, tol: float, mod_lattice: bool) -> int:
    for i, h in enumerate(elements):
        if g.close_to(h, tol, mod_lattice):
            return i
    return -1


def enumerate_group(
    generators: Sequence[AffineIsometry],
    max_elements: int = 1000,
    tol: float = DEDUP_TOL,
    mod_lattice: bool = False,
) -> list:
    """Breadth-first closure of ``generators`` under composition.

    Elements are deduplicated entrywise within ``tol`` (translations modulo
    the integer lattice when ``mod_lattice``).  The identity comes first.
    """
    n = generators[0].dim
    elements = [AffineIsometry.identity(n)]
    queue = [elements[0]]
    while queue:
        nxt = []
        for h in queue:
            for s in generators:
                g = _canonical(s @ h, mod_lattice)
                if _index_of(g, elements, tol, mod_lattice) < 0:
                    elements.append(g)
                    nxt.append(g)
                    if len(elements) > max_elements:
                        raise GroupOverflowError(
                            f"group is not finite within the bound of {max_elements} elements"
                        )
        queue = nxt
    return elements


def check_group_axioms(elements, tol: float = DEDUP_TOL, mod_lattice: bool = False) -> bool:
    """Identity present and closure under composition and inversion (exhaustive)."""
    if not elements:
        return False
    n = elements[0].dim
    if _index_of(AffineIsometry.identity(n), elements, tol, mod_lattice) < 0:
        return False
    for a in elements:
        if _index_of(a.inverse(), elements, tol, mod_lattice) < 0:
            return False
        for b in elements:
            if _index_of(a @ b, elements, tol, mod_lattice) < 0:
                return False
    return True


def same_set(a, b, tol: float = DEDUP_TOL, mod_lattice: bool = False) -> bool:
    return len(a) == len(b) and all(_index_of(g, b, tol, mod_lattice) >= 0 for g in a)


def _point_gap(x, y, mod_lattice: bool) -> np.ndarray:
    d = np.asarray(x) - np.asarray(y)
    if mod_lattice:
        d = d - np.round(d)
    return d


def isotropy(elements, p, tol: float = 1e-9, mod_lattice: bool = False) -> list:
    """Elements ``g`` with ``|g p - p| <= tol`` (coordinates, or ambient for spheres)."""
    p = np.asarray(p, dtype=float)
    return [g for g in elements if np.linalg.norm(_point_gap(g.apply(p), p, mod_lattice)) <= tol]


def normalizer(elements, subgroup, tol: float = DEDUP_TOL, mod_lattice: bool = False) -> list:
    """``{h : h K h^-1 = K}`` by exhaustive conjugation."""
    out = []
    for h in elements:
        hinv = h.inverse()
        conj = [_canonical(h @ k @ hinv, mod_lattice) for k in subgroup]
        if same_set(conj, subgroup, tol, mod_lattice):
            out.append(h)
    return out


def orientation_subgroup(elements) -> list:
    return [g for g in elements if g.det() > 0]


# -- fixed sets ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffineSubspace:
    """``base + span(directions)``; optionally intersected with the unit sphere."""

    base: np.ndarray
    directions: np.ndarray
    sphere: bool = False

    @property
    def dim(self) -> int:
        if self.base is None:
            return -1
        return self.directions.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.directions.shape[1]

    @property
    def sphere_dim(self) -> int:
        """Dimension of the intersection with the unit sphere (-1 when empty)."""
        if self.dim < 0:
            return -1
        return self.dim - 1

    @property
    def is_empty(self) -> bool:
        return self.dim < 0 or (self.sphere and self.dim == 0)

    @property
    def geometric_dim(self) -> int:
        return self.sphere_dim if self.sphere else self.dim

    def residual(self, x) -> float:
        """Distance from ``x`` to the subspace (to the sphere section in sphere mode)."""
        x = np.asarray(x, dtype=float)
        d = x - self.base
        off = d - (d @ self.directions.T) @ self.directions
        res = float(np.linalg.norm(off))
        if self.sphere:
            res = max(res, abs(float(np.linalg.norm(x)) - 1.0))
        return res

    def sample(self, count: int, rng) -> np.ndarray:
        coeffs = rng.standard_normal((count, self.dim))
        pts = coeffs @ self.directions
        if self.sphere:
            return pts / np.linalg.norm(pts, axis=1, keepdims=True)
        return self.base + pts


def empty_subspace(n: int, sphere: bool = False) -> AffineSubspace:
    return AffineSubspace(None, np.zeros((0, n)), sphere)


def fixed_set(subgroup, sphere: bool = False, cutoff: float = SVD_CUTOFF, shifts=None) -> AffineSubspace:
    """Common solutions of ``(A_i - I) x = -b_i (+ k_i)``.

    ``shifts`` (one integer vector per element) selects a lattice translate
    for torus actions.  Returns an empty subspace when the system is
    inconsistent.
    """
    n = subgroup[0].dim
    rows = np.vstack([g.A - np.eye(n) for g in subgroup])
    rhs = np.concatenate([
        -g.b + (0.0 if shifts is None else np.asarray(shifts[i], dtype=float))
        for i, g in enumerate(subgroup)
    ])
    _, s, vt = np.linalg.svd(rows)
    rank = int(np.sum(s > cutoff))
    base, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    if np.max(np.abs(rows @ base - rhs), initial=0.0) > 1e-9:
        return empty_subspace(n, sphere)
    directions = vt[rank:].copy()
    # base orthogonal to the directions (minimum-norm particular solution)
    base = base - (base @ directions.T) @ directions
    base[np.abs(base) < 1e-15] = 0.0
    return AffineSubspace(base, directions, sphere)


def torus_fixed_components(subgroup, max_shift: int = 2) -> list:
    """Connected components of the fixed set of a torus action (one lift each).

    Scans integer right-hand-side shifts and keeps distinct components,
    with bases reduced into ``[0, 1)`` where possible.
    """
    n = subgroup[0].dim
    comps = []
    ranges = []
    for g in subgroup:
        nonzero = np.any(np.abs(g.A - np.eye(n)) > SVD_CUTOFF, axis=1)
        ranges.extend([range(-max_shift, max_shift + 1) if nz else range(0, 1) for nz in nonzero])
    for flat_shift in itertools.product(*ranges):
        shifts = np.array(flat_shift, dtype=float).reshape(len(subgroup), n)
        comp = fixed_set(subgroup, shifts=shifts)
        if comp.is_empty:
            continue
        base = comp.base - np.floor(comp.base + 1e-12)
        base = base - (base @ comp.directions.T) @ comp.directions
        base = base - np.floor(base + 1e-12)
        comp = AffineSubspace(base, comp.directions)
        if not any(_same_component(comp, c) for c in comps):
            comps.append(comp)
    comps.sort(key=lambda c: tuple(np.round(c.base, 12)))
    return comps


def _same_component(a: AffineSubspace, b: AffineSubspace) -> bool:
    if a.dim != b.dim:
        return False
    if a.dim and np.linalg.matrix_rank(np.vstack([a.directions, b.directions]), tol=1e-9) != a.dim:
        return False
    d = a.base - b.base
    d = d - (d @ a.directions.T) @ a.directions
    return bool(np.max(np.abs(d - np.round(d))) < 1e-9)


# -- deck renormalization -----------------------------------------------------


BOX_SLACK = 1e-12


def _box_penalty(x, box) -> float:
    # half-open box [lo, hi), shifted by a tiny slack so that round-off
    # (e.g. -1e-17 + 1 == 1.0) cannot make both neighbours look outside
    lo, hi = box[:, 0] - BOX_SLACK, box[:, 1] - BOX_SLACK
    below = np.maximum(lo - x, 0.0)
    above = np.maximum(x - hi, 0.0) + (x >= hi)
    return float(np.sum(below + above))


def representative(group: IsometryGroup, p, max_moves: int = 100000) -> AffineIsometry:
    """Greedy word ``g`` with ``g p`` in the fundamental box.

    At each move the generator (or inverse) that most decreases the box
    penalty is applied; ties prefer the previous move, then generator order.
    """
    box = group.fundamental_domain
    if box is None:
        raise RenormalizationError("group has no fundamental domain")
    p = np.asarray(p, dtype=float)
    moves = []
    for s in group.generators:
        moves.extend([s, s.inverse()])
    g = AffineIsometry.identity(group.dim)
    x = p
    pen = _box_penalty(x, box)
    last = None
    for _ in range(max_moves):
        if pen == 0.0:
            return g
        best, best_pen = None, pen
        order = ([last] if last is not None else []) + list(range(len(moves)))
        for i in order:
            cand = _box_penalty(moves[i].apply(x), box)
            if cand < best_pen - 1e-15:
                best, best_pen = i, cand
        if best is None:
            raise RenormalizationError(
                f"no generator moves {x.tolist()} closer to the fundamental domain"
            )
        g = moves[best] @ g
        x = moves[best].apply(x)
        pen, last = best_pen, best
    raise RenormalizationError("renormalization did not terminate")


def renormalize(loop, group: IsometryGroup):
    """Translate a loop so that ``v_0`` lies in the fundamental domain.

    Returns ``(g, g . loop)``.  Finite groups without a fundamental domain
    return the identity; deck groups must have one.  Also checks that every vertex lies within the energy
    margin ``sqrt(2E)`` of the box, measured through the smallest metric
    eigenvalue seen at the vertices.
    """
    from .loops import energy, transform

    if group.fundamental_domain is None:
        if group.kind == "deck":
            raise RenormalizationError("deck group has no fundamental domain")
        return AffineIsometry.identity(group.dim), loop
    g = representative(group, loop.vertices[0])
    out = loop if g.is_identity(0.0) else transform(loop, g)
    box = group.fundamental_domain
    verts = out.vertices
    gap = np.maximum(box[:, 0] - verts, 0.0) + np.maximum(verts - box[:, 1], 0.0)
    gap = float(np.max(np.linalg.norm(gap, axis=1)))
    if gap > 0.0:
        lam = float(np.min(np.linalg.eigvalsh(loop.chart.metric(verts))))
        margin = math.sqrt(2.0 * energy(out) / max(lam, 1e-300))
        if gap > margin * (1.0 + 1e-9) + 1e-12:
            raise RenormalizationError(
                f"renormalized loop leaves the energy margin of the fundamental domain ({gap:.3g} > {margin:.3g})"
            )
    return g, out


# -- configuration ------------------------------------------------------------


def isometry_from_config(entry: dict, n: int, default_name: str) -> AffineIsometry:
    A = np.array(entry.get("A", np.eye(n).tolist()), dtype=float)
    b = np.array(entry.get("b", [0.0] * n), dtype=float)
    if A.shape != (n, n) or b.shape != (n,):
        raise ConfigError(f"generator {default_name}: A must be {n}x{n} and b of length {n}")
    return AffineIsometry(A, b, ((entry.get("name", default_name), 1),))


def group_from_config(cfg: dict, n: int, mod_lattice: bool = False) -> IsometryGroup:
    gens = tuple(
        isometry_from_config(e, n, f"g{i + 1}") for i, e in enumerate(cfg["generators"])
    )
    box = None
    fd = cfg.get("fundamental_domain")
    if fd is not None:
        box = np.array(
            [[-math.inf if lo is None else lo, math.inf if hi is None else hi] for lo, hi in fd["box"]],
            dtype=float,
        )
        if box.shape != (n, 2):
            raise ConfigError(f"fundamental_domain box must have {n} rows")
    return IsometryGroup(gens, cfg.get("kind", "finite"), box, mod_lattice, int(cfg.get("max_elements", 1000)))


# -- small catalog used by tests and bundled configs ----------------------------


def rotation2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def block_rotation(n: int, angle: float) -> np.ndarray:
    """``R(angle)`` on the first two coordinates, identity elsewhere."""
    A = np.eye(n)
    A[:2, :2] = rotation2(angle)
    return A


def lattice_group(n: int) -> IsometryGroup:
    """Integer translations of ``R^n`` with fundamental domain ``[0, 1)^n``."""
    gens = tuple(AffineIsometry.translation(np.eye(n)[i], name=f"t{i + 1}") for i in range(n))
    return IsometryGroup(gens, "deck", np.array([[0.0, 1.0]] * n))


def glide_group() -> IsometryGroup:
    """Moebius band cover: ``<(x, y) -> (x + 1, -y)>`` on the plane."""
    glide = AffineIsometry(np.diag([1.0, -1.0]), [1.0, 0.0], (("glide", 1),))
    return IsometryGroup((glide,), "deck", np.array([[0.0, 1.0], [-math.inf, math.inf]]))


def permutation_matrix(perm: Sequence[int]) -> np.ndarray:
    n = len(perm)
    P = np.zeros((n, n))
    P[list(perm), range(n)] = 1.0
    return P
