import json
import math

import mpmath
import numpy as np
import pytest

from hypnet import bounds
from hypnet.bounds import (
    BoundConfig,
    BoundsError,
    ConfigurationError,
    ConstantLedger,
    HypothesisViolation,
    RegimeError,
    croke_check,
    embolic_beta,
    embolic_bound,
    embolic_lower,
    gromov_forward,
    gromov_invert,
    jt_constant,
    jt_terms,
    systolic_bound,
)
from hypnet.hypgeom import UnsupportedDimensionError, ball_volume, euclidean_ball_volume

from conftest import BOLZA_SYS


def asymptotic_inverse(y, n):
    """Two-term expansion of the inverse of s log^n s: log s = L - n log L + n^2 log L / L."""
    L = math.log(y)
    return math.exp(L - n * math.log(L) + n * n * math.log(L) / L)


# -- ledger -----------------------------------------------------------------------------


def test_ledger_defaults_and_tags():
    led = ConstantLedger()
    assert led.get("nu", 2).value == pytest.approx(math.pi)
    assert led.get("nu", 3).value == pytest.approx(1.01494, abs=1e-5)
    assert led.get("nu", 3).tag == "configured"
    for kind in ("C", "C_prime"):
        assert led.get(kind, 3).tag == "placeholder"
    assert led.get("nu", 5).tag == "placeholder"
    assert led.placeholders() == ["C_3", "C_prime_3", "nu_5"]


def test_ledger_rejects_nonpositive_and_unknown_tag():
    with pytest.raises(BoundsError):
        bounds.Constant(0.0, "configured")
    with pytest.raises(BoundsError):
        bounds.Constant(1.0, "guess")


def test_ledger_json_round_trip(tmp_path):
    led = ConstantLedger()
    led.set("C_3", 0.5, "configured", "test value")
    led.record("K_3", jt_constant(0.3, 3), "jt constant", a0=0.3)
    path = tmp_path / "ledger.json"
    led.save(path)
    back = ConstantLedger.load(path)
    assert back.to_dict() == led.to_dict()
    assert back.entries["K_3"].inputs == {"a0": 0.3}
    # plain numbers are read as configured constants
    path.write_text(json.dumps({"C_2": 2.0}))
    assert ConstantLedger.load(path).get("C", 2).tag == "configured"


def test_computed_entries_record_inputs():
    led = ConstantLedger()
    systolic_bound(2, 1000, BoundConfig(delta0=1.5), led)
    e = led.entries["K_2"]
    assert e.tag == "computed" and e.inputs == {"a0": 1.5, "n": 2}


# -- JT constant ---------------------------------------------------------------------------


def test_jt_constant_decreasing_in_a0():
    # K decreases while F_max is near its small-R limit 5^n; all dimensions turn around past a0 ~ 0.98
    for n in range(2, 7):
        Ks = [jt_constant(a, n) for a in np.linspace(0.05, 0.9, 30)]
        assert all(b < a for a, b in zip(Ks, Ks[1:]))


def test_jt_constant_not_globally_monotone():
    # F_max grows like e^{2(n-1)R}, which eventually beats the growing denominator
    assert jt_constant(4.0, 3) > jt_constant(2.5, 3)
    assert jt_constant(2.0, 4) > jt_constant(1.0, 4)


def test_jt_constant_closed_vs_quadrature():
    a = jt_constant(0.5, 2, method="closed")
    b = jt_constant(0.5, 2, method="quad")
    assert abs(a / b - 1) < 1e-8
    R = 0.25
    F = (math.cosh(2.5 * R) - 1) / (math.cosh(R / 2) - 1)
    assert a == pytest.approx(F / (2 * math.pi * (math.cosh(R / 2) - 1)), rel=1e-12)


def test_jt_terms_regimes():
    t3 = jt_terms(1.0, 3)
    assert t3["R"] == 0.5 and t3["cone_factor"] == 2
    t4 = jt_terms(1.0, 4)
    assert t4["R"] == 1.0 and t4["cone_factor"] == 6
    assert jt_terms(1.0, 2, regime="jtn")["R"] == 1.0
    with pytest.raises(RegimeError):
        jt_terms(1.0, 2, regime="embolic")
    with pytest.raises(BoundsError):
        jt_constant(0.0, 2)
    with pytest.raises(UnsupportedDimensionError):
        jt_constant(1.0, 1)


# -- Gromov function ------------------------------------------------------------------------


def test_gromov_forward_unit_case():
    assert gromov_forward(math.e, 1) == pytest.approx(math.e, rel=1e-15)


def test_gromov_forward_guard():
    with pytest.raises(RegimeError):
        gromov_forward(2.0, 3)
    with pytest.raises(RegimeError):
        gromov_forward(1.0, 2, Cp=2.0)
    assert gromov_forward(math.e / 2, 2, Cp=2.0) == pytest.approx(math.e / 2)


def test_gromov_forward_increasing():
    for n in (1, 2, 3, 4, 5):
        s = np.geomspace(math.e, 1e10, 400)
        f = [gromov_forward(x, n) for x in s]
        assert all(b > a for a, b in zip(f, f[1:]))


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_gromov_forward_vs_extended_precision(n):
    mpmath.mp.dps = 40
    for s in (3.0, 17.5, 1e3, 4.2e7):
        for C, Cp in ((1.0, 1.0), (0.3, 2.5)):
            ref = mpmath.mpf(C) * s * mpmath.log(mpmath.mpf(Cp) * s) ** n
            assert gromov_forward(s, n, C, Cp) == pytest.approx(float(ref), rel=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_invert_round_trip(n):
    for y in np.geomspace(10, 1e12, 60):
        inv = gromov_invert(y, n)
        assert abs(gromov_forward(inv.value, n) - y) / y < 1e-10
        assert inv.residual < 1e-10


def test_invert_forward_identity():
    for n in (2, 3):
        for s in np.geomspace(3, 1e8, 30):
            assert gromov_invert(gromov_forward(s, n), n).value == pytest.approx(s, rel=1e-10)


def test_invert_increasing():
    for n in (2, 3, 4):
        vals = [gromov_invert(y, n).value for y in np.geomspace(10, 1e12, 80)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


def test_invert_asymptotic_oracle():
    inv = gromov_invert(1e6, 3)
    assert abs(inv.value / asymptotic_inverse(1e6, 3) - 1) < 0.25
    # the one-term form y / log^3 y is a valid lower bound but far from tight here
    assert inv.value >= 1e6 / math.log(1e6) ** 3
    assert inv.comparator == pytest.approx(1e6 / math.log(1e6) ** 3)


def test_invert_below_range():
    with pytest.raises(RegimeError):
        gromov_invert(2.0, 3)


def test_invert_nonunit_constants():
    inv = gromov_invert(5e4, 3, C=0.4, Cp=3.0)
    assert gromov_forward(inv.value, 3, 0.4, 3.0) == pytest.approx(5e4, rel=1e-10)
    assert inv.value >= inv.comparator


# -- systolic route ------------------------------------------------------------------------------


def test_systolic_bound_requires_configuration():
    with pytest.raises(ConfigurationError):
        systolic_bound(3, 1000, BoundConfig())
    with pytest.raises(ConfigurationError):
        systolic_bound(3, 1000, BoundConfig(delta0=0.5))
    with pytest.raises(BoundsError):
        systolic_bound(3, 0, BoundConfig(s0=10, delta0=0.5))


def test_systolic_bound_monotone_and_reproducible():
    cfg = BoundConfig(s0=10.0, delta0=0.5)
    led = ConstantLedger()
    prev = None
    for t in (1e5, 2e5, 4e5, 8e5):
        b = systolic_bound(3, int(t), cfg, led)
        if prev is not None:
            assert b.value > prev
        prev = b.value
        # recompute from (t, K, nu, C, C') alone
        again = gromov_invert(b.t / (b.K * b.nu), 3, b.C, b.Cp).value
        assert again == b.value
        assert b.end_to_end_constant == pytest.approx(b.value * math.log(b.t) ** 3 / b.t)
        assert not b.illustrative


def test_systolic_bound_surface_is_illustrative(bolza, bolza_inj):
    from hypnet import netvor

    # jt-regime run: t <= K vol forces y = t / (K nu) <= vol / nu = 4, here far below the guard e
    res = netvor.jt_pipeline(bolza, netvor.PipelineConfig(regime="jt3"))
    b = systolic_bound(2, res.t, BoundConfig(delta0=bolza_inj), strict=False)
    assert b.illustrative and b.value is None and "below" in b.note
    assert b.K == pytest.approx(res.K) and b.y == pytest.approx(res.t / (res.K * math.pi))
    with pytest.raises(RegimeError):
        systolic_bound(2, res.t, BoundConfig(delta0=bolza_inj))
    # a finer net pushes t past e K nu and the chain returns a value
    fine = netvor.jt_pipeline(bolza, netvor.PipelineConfig(regime="free", R=0.1, h=0.01, a0=bolza_inj))
    b = systolic_bound(2, fine.t, BoundConfig(delta0=bolza_inj))
    assert b.illustrative and b.value > math.e
    assert gromov_forward(b.value, 2) == pytest.approx(b.y, rel=1e-10)


# -- comparison checks ---------------------------------------------------------------------------


def test_croke_surface_example():
    (row,) = croke_check(2, 1.0, [0.1])
    assert row.volume == pytest.approx(2 * math.pi * (math.cosh(0.1) - 1), rel=1e-14)
    assert row.volume == pytest.approx(0.0314421, abs=1e-7)
    assert row.lower == pytest.approx(math.pi * 0.01)
    assert row.holds


def test_croke_ratio_increasing_and_limit():
    for n in range(2, 7):
        rows = croke_check(n, 6.0, np.linspace(0.01, 3, 100))
        ratios = [r.ratio for r in rows]
        assert all(r.holds for r in rows)
        assert all(b > a for a, b in zip(ratios, ratios[1:]))
        small = croke_check(n, 1.0, [1e-5])[0].ratio
        assert small == pytest.approx(euclidean_ball_volume(n), rel=1e-8)


def test_croke_hypothesis():
    with pytest.raises(HypothesisViolation):
        croke_check(2, 1.0, [0.6])
    strict = croke_check(2, 1.0, [0.4], alpha=3.2)
    assert not strict[0].holds or strict[0].volume >= 3.2 * 0.16


# -- embolic -----------------------------------------------------------------------------------------


def test_embolic_regime_required():
    with pytest.raises(RegimeError):
        embolic_bound(2, 4 * math.pi, 1.5, 0.5, 100)


def test_embolic_beta_recompute():
    led = ConstantLedger()
    e = embolic_bound(2, 4 * math.pi, 1.5, 0.3, 190, led)
    alpha = euclidean_ball_volume(2)
    assert led.entries["beta_2"].value == pytest.approx(2**2 * led.entries["T_factor_2"].value / alpha, rel=1e-15)
    assert e.beta == pytest.approx(embolic_beta(2), rel=1e-15)
    assert e.beta == pytest.approx(100**2 / alpha**2, rel=1e-14)


def test_embolic_scales_as_sqrt():
    beta = embolic_beta(3)
    for s in (10, 1000, 12345):
        assert embolic_lower(4 * s, beta) == pytest.approx(2 * embolic_lower(s, beta), rel=1e-15)
        assert embolic_lower(s, beta) ** 2 * beta == pytest.approx(s, rel=1e-14)


def test_embolic_sandwich_bolza(bolza, bolza_inj):
    from hypnet import netvor

    res = netvor.jt_pipeline(bolza, netvor.PipelineConfig(regime="embolic"))
    e = embolic_bound(2, bolza.volume, res.inj, res.R, res.t)
    assert e.sandwich_holds and e.emb_lower <= e.emb_upper


# -- reports --------------------------------------------------------------------------------------------


def test_report_flags_and_rows(bolza_runs):
    res = bolza_runs[0.3]
    led = ConstantLedger()
    rep = bounds.build_report(res, led, BoundConfig(delta0=res.inj / 8))
    assert rep.placeholders == ["C_2", "C_prime_2"]
    assert any("illustrative" in f for f in rep.flags)
    rows = rep.csv_rows()
    assert [r["bound_thm"] for r in rows] == ["packing", "jt", "systolic"]
    assert set(rows[0]) == set(bounds.CSV_COLUMNS)
    assert rep.jt_holds and rep.packing_holds
    data = json.loads(rep.to_json())
    assert data["constants"]["K_2"]["tag"] == "computed"
    # every reported bound is reproducible from the ledger
    assert data["K"] * data["volume"] == pytest.approx(float(rows[1]["value"]))
    assert rep.simplicial_volume_estimate == pytest.approx(4.0)


def test_csv_writer_header(bolza_runs, tmp_path):
    rep = bounds.build_report(bolza_runs[0.5])
    text = bounds.write_csv(rep.csv_rows(), tmp_path / "a.csv", version="9.9")
    lines = text.splitlines()
    assert lines[0] == "# hypnet 9.9"
    assert lines[1] == ",".join(bounds.CSV_COLUMNS)
