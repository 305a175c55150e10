import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closedgeo import loops as L
from closedgeo import manifold as M
from closedgeo.affine import AffineIsometry
from closedgeo.errors import ResolutionError
from conftest import great_circle_distance


def circle(radius=1.0):
    return lambda t: (radius * math.cos(2 * math.pi * t), radius * math.sin(2 * math.pi * t))


def loop_point(loop, t):
    """Point of the piecewise-geodesic parametrization at ``t`` in [0, 1)."""
    k = min(int(math.floor(t * loop.m)), loop.m - 1)
    return loop.segments().segment(k).evaluate(t * loop.m - k)


def test_constant_loop(plane):
    c = L.constant_loop(plane, [0.3, 0.4], 8)
    assert L.energy(c) == 0.0
    assert L.length(c) == 0.0


def test_unit_square(plane):
    sq = L.GeodesicLoop(plane, [[0, 0], [1, 0], [1, 1], [0, 1]])
    assert L.energy(sq) == 8.0
    assert L.length(sq) == 4.0


def test_torus_straight_loop(torus_chart):
    shift = AffineIsometry.translation([1.0, 0.0])
    c = L.resample(lambda t: (t, 0.3), torus_chart, 8, twist=shift)
    assert L.energy(c) == pytest.approx(0.5, abs=1e-15)
    assert L.length(c) == pytest.approx(1.0, abs=1e-15)


def test_inscribed_polygon_perimeter(plane):
    c = L.resample(circle(), plane, 64)
    assert L.length(c) == pytest.approx(2 * 64 * math.sin(math.pi / 64), abs=1e-13)


def test_loop_distance_examples(plane):
    a = L.resample(circle(), plane, 16)
    assert L.loop_distance(a, a) == 0.0
    p, q = L.constant_loop(plane, [0, 0], 16), L.constant_loop(plane, [3, 4], 16)
    assert L.loop_distance(p, q) == pytest.approx(5.0, abs=1e-14)
    b = L.resample(circle(0.9), plane, 16)
    assert L.loop_distance(a, b) == pytest.approx(0.1, abs=1e-12)
    assert L.loop_distance(b, a) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        L.loop_distance(a, L.resample(circle(), plane, 8))


def test_resample_examples(plane, torus_chart):
    c = L.resample(lambda t: (2.0, -1.0), plane, 6)
    assert np.all(c.vertices == [2.0, -1.0])
    octagon = L.resample(circle(), plane, 8)
    angles = np.arctan2(octagon.vertices[:, 1], octagon.vertices[:, 0]) % (2 * math.pi)
    assert np.allclose(angles, np.arange(8) * math.pi / 4, atol=1e-15)
    assert np.allclose(np.linalg.norm(octagon.vertices, axis=1), 1.0, atol=1e-15)
    line = L.resample(lambda t: (2 * t, t), torus_chart, 16, twist=AffineIsometry.translation([2.0, 1.0]))
    assert np.allclose(line.vertices, np.outer(np.arange(16) / 16, [2.0, 1.0]), atol=1e-15)
    assert L.length(line) == pytest.approx(math.sqrt(5), abs=1e-14)


def test_resample_errors(plane, torus_chart):
    with pytest.raises(ResolutionError):
        L.resample(circle(), torus_chart, 8)
    with pytest.raises(ValueError, match="not closed"):
        L.resample(lambda t: (t, 0.0), plane, 8)
    with pytest.raises(ValueError):
        L.resample(circle(), plane, 7)


def test_resample_reproduces_vertices(sphere):
    c = L.resample(lambda t: (1.2 + 0.3 * math.sin(2 * math.pi * t), 0.4 * math.cos(2 * math.pi * t)), sphere, 12)
    again = L.resample(lambda t: loop_point(c, t), sphere, 12)
    assert np.max(np.abs(again.vertices - c.vertices)) <= 1e-10


def test_energy_matches_integral(sphere, wavy):
    for chart, curve in (
        (sphere, lambda t: (1.3 + 0.2 * math.cos(4 * math.pi * t), 0.5 * math.sin(2 * math.pi * t))),
        (wavy, lambda t: (0.3 * math.cos(2 * math.pi * t), 0.2 * math.sin(2 * math.pi * t))),
    ):
        c = L.resample(curve, chart, 16)
        assert L.integrated_energy(c) == pytest.approx(L.energy(c), rel=1e-8)


vertex_sets = st.lists(
    st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=2, max_size=12
).filter(lambda v: len(v) % 2 == 0)


@settings(max_examples=60, deadline=None)
@given(vertex_sets)
def test_energy_length_inequality(verts):
    chart = M.flat([[2.0, 0.5], [0.5, 1.0]], r=10.0)
    c = L.GeodesicLoop(chart, verts)
    assert L.length(c) ** 2 <= 2 * L.energy(c) * (1 + 1e-10) + 1e-300


def test_transform_preserves_energy(wavy, rng):
    c = L.resample(lambda t: (0.2 + 0.1 * math.cos(2 * math.pi * t), 0.3 * math.sin(2 * math.pi * t)), wavy, 12)
    g = AffineIsometry.translation([1.0, -2.0])
    d = L.transform(c, g).fresh()
    assert L.energy(d) == pytest.approx(L.energy(c), rel=1e-12)
    assert L.length(d) == pytest.approx(L.length(c), rel=1e-12)


def test_transform_conjugates_twist(torus_chart):
    glide = AffineIsometry(np.diag([1.0, -1.0]), [1.0, 0.0])
    c = L.resample(lambda t: (t, 0.0), torus_chart, 8, twist=glide)
    flip = AffineIsometry(np.diag([-1.0, 1.0]), [0.0, 0.0])
    d = L.transform(c, flip)
    assert np.allclose(d.twist.A, np.diag([1.0, -1.0]))
    assert np.allclose(d.twist.b, [-1.0, 0.0])
    assert L.energy(d.fresh()) == pytest.approx(0.5, abs=1e-15)


def test_ball_grid():
    grid, boundary = L.ball_grid(2, 41)
    assert grid.shape == (41, 1)
    assert boundary.sum() == 2 and boundary[0] and boundary[-1]
    grid, boundary = L.ball_grid(3, 5)
    assert np.all(np.linalg.norm(grid[boundary], axis=1) == pytest.approx(1.0))
    assert np.all(np.linalg.norm(grid[~boundary], axis=1) < 1.0)
    assert L.ball_grid(1, 1)[0].shape == (1, 0)
    for k, res in ((2, 40), (4, 3), (0, 3)):
        with pytest.raises(ValueError):
            L.ball_grid(k, res)


def test_single_loop_sweepout(plane):
    corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)

    def square(x, t):
        s = 4 * t
        k = min(int(s), 3)
        return corners[k] + (s - k) * (corners[k + 1] - corners[k])

    sw = L.build_sweepout(square, plane, 1, 1, 4)
    assert len(sw.loops) == 1
    assert L.sweepout_kappa(sw) == 8.0


def test_constant_sweepout(plane):
    sw = L.build_sweepout(lambda x, t: (0.5, 0.5), plane, 2, 5, 8)
    assert L.sweepout_kappa(sw) == 0.0


def test_latitude_sweepout(sphere):
    family, twist = L.latitude_family()
    sw = L.build_sweepout(family, sphere, 2, 41, 40, twist)
    assert all(c.m == 40 for c in sw.loops)
    energies = sw.energies()
    for x, on_boundary, c, e in zip(sw.grid[:, 0], sw.boundary, sw.loops, energies):
        if on_boundary:
            assert e == 0.0
            assert np.all(c.vertices == c.vertices[0])
            continue
        # oracle: each edge is the great-circle arc between consecutive samples
        th = math.acos(x)
        arc = great_circle_distance((th, 0.0), (th, 2 * math.pi / 40))
        assert e == pytest.approx(0.5 * 40 * 40 * arc**2, rel=1e-8)
    assert int(np.argmax(energies)) == 20
    assert sw.kappa == pytest.approx(2 * math.pi**2, rel=1e-9)
    # inscribed chords would give a smaller value; edges are geodesics, not chords
    assert sw.kappa > 2 * 40**2 * math.sin(math.pi / 40) ** 2


def test_sphere_map_family(plane):
    family = L.family_from_sphere_map(lambda y: (y[1], y[2]))
    sw = L.build_sweepout(family, plane, 2, 9, 16)
    mid = sw.loops[4]
    assert np.allclose(np.linalg.norm(mid.vertices, axis=1), 1.0)
    assert np.all(sw.energies()[sw.boundary] == 0.0)
