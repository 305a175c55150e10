"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import functools
import io
import json
import math
import os
import sys
import tempfile

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from closedgeo import cli
from closedgeo import geodesic as G
from closedgeo import loops as L
from closedgeo import manifold as M
from closedgeo import orbifold as O
from closedgeo import symmetry as S
from closedgeo.affine import AffineIsometry
from closedgeo.shortening import ShorteningConfig, angle_defects, birkhoff_step, birkhoff_step_many, minmax, shorten_to_limit
from conftest import LAMBDA, config_path, great_circle_distance

SEED = 20240601


def report(capsys, number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


# -- shared runs ------------------------------------------------------------------


def charts():
    return {
        "euclidean": M.euclidean(2, r=1.0),
        "flat": M.flat([[2.0, 0.5], [0.5, 1.0]], r=1.0),
        "conformal": M.conformal(LAMBDA, r=0.5),
        "sphere": M.sphere_chart(1.0, r=1.0),
    }


# Fourier amplitude per chart.  A curve with three modes of coefficients in
# [-a/k, a/k] has coordinate speed <= 12 pi a, so vertices two apart on a
# 24-gon are at most pi a apart in coordinates: inside r for every chart here.
AMPLITUDE = {"euclidean": 0.3, "flat": 0.2, "conformal": 0.12, "sphere": 0.3}


def random_loops(chart, kind, rng, count, m=24):
    """``count`` random closed 24-gons (three Fourier modes around a random centre)."""
    t = 2 * math.pi * np.arange(m) / m
    out = []
    for _ in range(count):
        if kind == "sphere":
            centre = np.array([rng.uniform(1.2, 1.9), rng.uniform(-3, 3)])
        else:
            centre = rng.uniform(-2, 2, size=2)
        verts = np.repeat(centre[None], m, axis=0)
        for k in (1, 2, 3):
            a, b = rng.uniform(-1, 1, size=(2, 2)) * AMPLITUDE[kind] / k
            verts = verts + np.outer(np.cos(k * t), a) + np.outer(np.sin(k * t), b)
        out.append(L.GeodesicLoop(chart, verts))
    return out


def energy_length(loops):
    """``(E, L)`` for each loop from one fresh batched solve of all edges."""
    chart = loops[0].chart
    ends = [c.edge_ends() for c in loops]
    p = np.concatenate([e[0] for e in ends])
    q = np.concatenate([e[1] for e in ends])
    batch, status = G.connect_batch(chart, p, q)
    G.raise_for_status(status, p, q)
    d = batch.lengths.reshape(len(loops), -1)
    m = d.shape[1]
    return 0.5 * m * np.sum(d**2, axis=1), np.sum(d, axis=1)


def torus_loop(direction, m=16, amplitude=0.1):
    chart = M.euclidean(2, r=0.5)
    family, twist = L.class_line_family(direction, amplitude)
    return L.resample(lambda t: family(None, t), chart, m, twist)


@functools.lru_cache(maxsize=None)
def torus_runs():
    cfg = ShorteningConfig(max_iters=500)
    return {
        (1, 0): shorten_to_limit(torus_loop((1.0, 0.0)), S.lattice_group(2), cfg),
        (2, 1): shorten_to_limit(torus_loop((2.0, 1.0)), S.lattice_group(2), cfg),
    }


@functools.lru_cache(maxsize=None)
def mobius_run():
    chart = M.euclidean(2, r=0.5)
    glide = AffineIsometry(np.diag([1.0, -1.0]), [1.0, 0.0], (("glide", 1),))
    c = L.resample(lambda t: (t + 0.3, 0.1 * math.cos(math.pi * t)), chart, 16, glide)
    return shorten_to_limit(c, S.glide_group(), ShorteningConfig(max_iters=2000))


@functools.lru_cache(maxsize=None)
def sphere_run():
    chart = M.sphere_chart(1.0, r=1.0)
    family, twist = L.latitude_family()
    sw = L.build_sweepout(family, chart, 2, 41, 80, twist)
    return sw, minmax(sw, config=ShorteningConfig(max_iters=2000))


# -- criteria ---------------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(SEED)
    violations, worst, count = 0, -math.inf, 0
    for kind, chart in charts().items():
        loops = random_loops(chart, kind, rng, 50)
        e0, l0 = energy_length(loops)
        e1, l1 = energy_length(birkhoff_step_many(loops))
        de = e1 - e0 - 1e-12 * np.maximum(1.0, e0)
        dl = l1 - l0 - 1e-12 * np.maximum(1.0, l0)
        violations += int(np.sum(de > 0) + np.sum(dl > 0))
        worst = max(worst, float(np.max(de)), float(np.max(dl)))
        count += len(loops)
    return violations == 0 and count == 200, f"{count} loops, {violations} violations, worst excess {worst:.2e}"


def criterion_2():
    runs = torus_runs()
    a, b = runs[(1, 0)], runs[(2, 1)]
    ok = (
        a.status == "found" and abs(a.length - 1.0) <= 1e-6 and a.iterations <= 500
        and b.status == "found" and abs(b.length - math.sqrt(5)) <= 1e-6
    )
    return ok, (f"(1,0): {a.status} L-1={a.length - 1:.1e} in {a.iterations} it; "
                f"(2,1): {b.status} L-sqrt5={b.length - math.sqrt(5):.1e}")


def criterion_3():
    sw, res = sphere_run()
    # oracle: an m-gon inscribed in the equator has great-circle edges of length 2 pi / m
    edge = great_circle_distance((math.pi / 2, 0.0), (math.pi / 2, 2 * math.pi / 80))
    e_oracle = 0.5 * 80 * 80 * edge**2
    e = res.trace.energies
    ok = (
        res.status == "found"
        and abs(res.length - 2 * math.pi) <= 1e-3
        and abs(res.energy - e_oracle) <= 1e-3
        and bool(np.all(np.diff(e) <= 1e-12))
        and res.length > sw.chart.r
    )
    return ok, (f"{res.status} after {res.iterations} rounds, L-2pi={res.length - 2 * math.pi:.1e}, "
                f"E-oracle={res.energy - e_oracle:.1e}")


def criterion_4():
    torus = M.euclidean(2, r=0.5)
    sphere = M.sphere_chart(1.0, r=1.0)
    samples = []
    for w, y0 in (((1.0, 0.0), 0.3), ((2.0, 1.0), 0.1), ((0.0, 1.0), 0.7), ((1.0, 1.0), 0.0)):
        w = np.array(w)
        samples.append(L.resample(lambda t: np.array([0.0, y0]) + t * w, torus, 16, AffineIsometry.translation(w)))
    rot = AffineIsometry.translation([0.0, 2 * math.pi])
    for m in (16, 80):
        samples.append(L.resample(lambda t: (math.pi / 2, 2 * math.pi * t), sphere, m, rot))
    # great circle inclined by 30 degrees to the equator, in unwrapped polar coordinates
    tilt = math.radians(30)

    def inclined(t):
        s = 2 * math.pi * t
        x = np.array([math.cos(s), math.sin(s) * math.cos(tilt), math.sin(s) * math.sin(tilt)])
        phi = math.atan2(x[1], x[0])
        phi += 2 * math.pi * round((s - phi) / (2 * math.pi))
        return np.array([math.acos(x[2]), phi])

    samples.append(L.resample(inclined, sphere, 32, rot))
    move = max(float(np.max(np.abs(birkhoff_step(c).vertices - c.vertices))) for c in samples)
    found = [r for r in (*torus_runs().values(), mobius_run(), sphere_run()[1]) if r.status == "found"]
    defect = max(float(np.max(angle_defects(r.loop))) for r in found)
    ok = move <= 1e-10 and defect <= 1e-6 and len(found) == 4
    return ok, f"max vertex move {move:.1e} over {len(samples)} geodesics; max angle defect {defect:.1e} over {len(found)} results"


def criterion_5():
    res = shorten_to_limit(L.resample(lambda t: (math.cos(2 * math.pi * t), math.sin(2 * math.pi * t)),
                                      M.euclidean(2, r=2.0), 64))
    return res.status == "degenerate", f"status {res.status}, final length {res.length:.1e}"


def criterion_6():
    plane = M.euclidean(2, r=2.0)
    seg = G.exp_map(plane, [0.0, 0.0], [1.0, 0.0])
    cyl = O.is_twisted_closed_geodesic(plane, seg, AffineIsometry.translation([1.0, 0.0]))
    mob = O.is_twisted_closed_geodesic(plane, seg, AffineIsometry(np.diag([1.0, -1.0]), [1.0, 0.0]))
    ident = O.is_twisted_closed_geodesic(plane, seg, AffineIsometry.identity(2))
    res = max(cyl.position_residual, cyl.velocity_residual, mob.position_residual, mob.velocity_residual)
    ok = cyl.passed and mob.passed and res <= 1e-10 and not ident.passed and abs(ident.position_residual - 1) <= 1e-12
    return ok, f"core residuals <= {res:.1e}; identity residual {ident.position_residual!r}"


def criterion_7():
    rng = np.random.default_rng(SEED)
    orb = O.sphere_orbifold(3, [AffineIsometry.linear(S.block_rotation(4, 2 * math.pi / 5), "r")])
    res = O.find_closed_geodesic_via_reduction(orb)
    step = res.chain.steps[0]
    pts = step.fixed.sample(20, rng)
    inv = max(step.fixed.residual(x) for h in step.normalizer for x in h.apply(pts))
    great = (step.fixed.sphere and step.dim == 1
             and np.allclose(step.fixed.base, 0.0) and np.allclose(step.fixed.directions[:, :2], 0.0))
    ok = (
        len(res.chain.steps) == 1 and great and res.chain.parity_ok()
        and abs(res.length - 2 * math.pi) <= 1e-9 and res.status == "found"
        and res.group_invariance <= 1e-10 and res.report.geodesic_residual <= 1e-10
        and inv <= 1e-10
    )
    return ok, (f"chain dims {res.chain.dims}, L-2pi={res.length - 2 * math.pi:.1e}, "
                f"G-invariance {res.group_invariance:.1e}, H.N residual {inv:.1e}")


def criterion_8():
    import itertools

    gens = [AffineIsometry.linear(S.permutation_matrix(p)) for p in ((1, 0, 2), (0, 2, 1))]
    group = S.enumerate_group(gens, 100)
    perms = [np.eye(3)[list(p)] for p in itertools.permutations(range(3))]
    swap = np.eye(3)[[1, 0, 2]]
    sub = [AffineIsometry.identity(3), AffineIsometry.linear(swap)]

    def conj_set(P):
        return {tuple(np.round(P @ Q @ P.T, 9).ravel()) for Q in (np.eye(3), swap)}

    # definitional oracles over the six permutation matrices
    want_h = [P for P in perms if conj_set(P) == conj_set(np.eye(3))]
    want_a3 = [P for P in perms if np.linalg.det(P) > 0]
    H = S.normalizer(group, sub)
    A3 = S.orientation_subgroup(group)
    ok = (
        len(group) == 6
        and S.same_set(H, [AffineIsometry.linear(P) for P in want_h])
        and S.same_set(A3, [AffineIsometry.linear(P) for P in want_a3])
        and all(S.check_group_axioms(x) for x in (group, H, A3, sub))
    )
    return ok, f"|S3|={len(group)}, |H|={len(H)}, |A3|={len(A3)}"


def criterion_9():
    rng = np.random.default_rng(SEED)
    worst_rt, worst_speed = 0.0, 0.0
    for kind, chart in charts().items():
        if kind == "sphere":
            p = np.column_stack([rng.uniform(0.6, 2.5, 100), rng.uniform(-3, 3, 100)])
        else:
            p = rng.uniform(-1, 1, size=(100, 2))
        v = rng.normal(size=(100, 2))
        v *= (rng.uniform(0.05, 0.49, 100) * chart.r / chart.norm(p, v))[:, None]
        segs = [G.exp_map(chart, a, b) for a, b in zip(p, v)]
        q = np.array([seg.endpoint for seg in segs])
        back, status = G.connect_batch(chart, p, q)
        G.raise_for_status(status, p, q)
        worst_rt = max(worst_rt, float(np.max(np.abs(back.v - v))))
        worst_speed = max(worst_speed, max(float(np.max(np.abs(s.speeds() - s.length))) / s.length for s in segs))
    sphere = charts()["sphere"]
    worst_gam = 0.0
    for th in rng.uniform(0.1, math.pi - 0.1, size=100):
        fd = M.christoffel_at(sphere, [th, rng.uniform(-3, 3)], method="fd")
        exact = np.zeros((2, 2, 2))
        exact[0, 1, 1] = -math.sin(th) * math.cos(th)
        exact[1, 0, 1] = exact[1, 1, 0] = math.cos(th) / math.sin(th)
        worst_gam = max(worst_gam, float(np.max(np.abs(fd - exact))))
    ok = worst_rt <= 1e-8 and worst_gam <= 1e-6 and worst_speed <= 1e-8
    return ok, f"roundtrip {worst_rt:.1e}, Christoffel {worst_gam:.1e}, speed drift {worst_speed:.1e}"


def criterion_10():
    rng = np.random.default_rng(SEED)
    cs = charts()
    pairs = []
    for _ in range(13):
        q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        pairs.append(("euclidean", AffineIsometry(q, rng.uniform(-3, 3, size=2))))
    for _ in range(12):
        sign = rng.choice([-1.0, 1.0])
        pairs.append(("flat", AffineIsometry(sign * np.eye(2), rng.uniform(-3, 3, size=2))))
    swaps = [np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]]), -np.eye(2), np.array([[0.0, -1.0], [-1.0, 0.0]])]
    for i in range(13):
        pairs.append(("conformal", AffineIsometry(swaps[i % 4], rng.integers(-3, 4, size=2).astype(float))))
    for i in range(12):
        A = np.eye(2) if i % 2 == 0 else np.diag([-1.0, -1.0])
        b = np.array([0.0 if i % 2 == 0 else math.pi, rng.uniform(-4, 4)])
        pairs.append(("sphere", AffineIsometry(A, b)))
    worst, verified = 0.0, 0
    for kind, chart in cs.items():
        gs = [g for k, g in pairs if k == kind]
        verified += sum(int(S.verify_isometry(chart, g, rng=rng).passed) for g in gs)
        loops = random_loops(chart, kind, rng, len(gs))
        left = birkhoff_step_many([L.transform(c, g).fresh() for c, g in zip(loops, gs)])
        right = [L.transform(d, g) for d, g in zip(birkhoff_step_many(loops), gs)]
        worst = max([worst] + [float(np.max(np.abs(a.vertices - b.vertices))) for a, b in zip(left, right)])
    ok = len(pairs) == 50 and verified == 50 and worst <= 1e-10
    return ok, f"{verified}/{len(pairs)} isometries verified, max vertex difference {worst:.1e}"


def _cli_bytes(argv):
    with tempfile.TemporaryDirectory() as tmp:
        out, trace = os.path.join(tmp, "r.json"), os.path.join(tmp, "t.jsonl")
        code = cli.run(list(argv) + ["--out", out, "--trace", trace], stdout=io.StringIO(), stderr=io.StringIO())
        with open(out, "rb") as fa, open(trace, "rb") as fb:
            return code, fa.read(), fb.read()


def criterion_11():
    with tempfile.TemporaryDirectory() as tmp:
        with open(config_path("torus_class10_shorten.json")) as fh:
            cfg = json.load(fh)
        cfg["loop"]["noise"] = 0.01
        noisy = os.path.join(tmp, "noisy.json")
        with open(noisy, "w") as fh:
            json.dump(cfg, fh)
        runs = [_cli_bytes(["--config", noisy, "--seed", "11"]) for _ in range(2)]
    sphere = config_path("sphere_latitude_coarse_minmax.json")
    threaded = [_cli_bytes(["--config", sphere, "--threads", t]) for t in ("1", "4")]
    repeat = runs[0] == runs[1] and runs[0][0] == 0
    threads = threaded[0] == threaded[1] and threaded[0][0] == 0
    return repeat and threads, f"seeded repeat identical: {repeat}; threads 1 vs 4 identical: {threads}"


CRITERIA = [
    (1, "energy/length monotonicity of D", criterion_1),
    (2, "flat-torus shortening ground truth", criterion_2),
    (3, "sphere min-max finds the equator", criterion_3),
    (4, "fixed-point criterion", criterion_4),
    (5, "degenerate plane circle", criterion_5),
    (6, "twisted closed-geodesic criterion", criterion_6),
    (7, "S^3/Z5 reduction chain", criterion_7),
    (8, "group algebra on S3", criterion_8),
    (9, "geodesic solver accuracy", criterion_9),
    (10, "Birkhoff step equivariance", criterion_10),
    (11, "CLI determinism", criterion_11),
]


@pytest.mark.parametrize("number, title, check", CRITERIA, ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, title, check, capsys):
    ok, detail = check()
    assert report(capsys, number, title, ok, detail), detail


if __name__ == "__main__":
    results = [report(None, n, t, *f()) for n, t, f in CRITERIA]
    sys.exit(0 if all(results) else 1)
