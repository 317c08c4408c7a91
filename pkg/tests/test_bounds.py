import math

import pytest
from hypothesis import given, settings, strategies as st

from sprinkle.bounds import (
    bound_table,
    calibrated_p,
    empirical_concentration,
    expected_round_weight,
    floored_round_weight,
    hoeffding_bound,
    isolated_prob_bound,
    pass_rate,
)
from sprinkle.core import PackingParams

ORACLE_2E8 = 6.709252558050237e-04  # 2 * exp(-8), frozen
ORACLE_2E2 = 0.2706705664732254  # 2 * exp(-2), frozen


def test_hoeffding_examples():
    assert hoeffding_bound([(0, 1)] * 100, 20) == pytest.approx(ORACLE_2E8, rel=1e-12)
    assert hoeffding_bound([(0, 1)] * 100, 0) == 2.0
    assert hoeffding_bound([(0, 2)] * 25, 10) == pytest.approx(ORACLE_2E2, rel=1e-12)


def test_hoeffding_degenerate_and_errors():
    assert hoeffding_bound([(1, 1)], 0) == 2.0
    assert hoeffding_bound([(1, 1), (3, 3)], 0.5) == 0.0
    with pytest.raises(ValueError):
        hoeffding_bound([], 1)
    with pytest.raises(ValueError):
        hoeffding_bound([(0, 1)], -1)
    with pytest.raises(ValueError):
        hoeffding_bound([(1, 0)], 1)


ranges = st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 5)), min_size=1, max_size=20)


@settings(max_examples=300, deadline=None)
@given(ranges, st.floats(0, 50), st.floats(0, 50))
def test_hoeffding_monotone_in_lambda(r, a, b):
    rr = [(lo, lo + w) for lo, w in r]
    lo_l, hi_l = sorted((a, b))
    assert hoeffding_bound(rr, hi_l) <= hoeffding_bound(rr, lo_l)


@settings(max_examples=300, deadline=None)
@given(ranges, st.floats(0, 50), st.integers(0, 19), st.floats(0, 3))
def test_hoeffding_monotone_in_width(r, lam, i, extra):
    rr = [(lo, lo + w) for lo, w in r]
    i %= len(rr)
    wider = list(rr)
    wider[i] = (rr[i][0], rr[i][1] + extra)
    assert hoeffding_bound(wider, lam) >= hoeffding_bound(rr, lam)
    assert 0 <= hoeffding_bound(rr, lam) <= 2


def test_expected_round_weight_examples():
    assert expected_round_weight(0.25, 0.05, 0, 30, 3) == 0
    # (0.25 / n^2) (1 - 0.8^5) / 0.2 = 0.8404 / n^2
    assert expected_round_weight(0.25, 0.05, 5, 1, 3) == pytest.approx(0.8404, rel=1e-12)
    assert expected_round_weight(0.25, 0.05, 5, 10, 3) == pytest.approx(0.008404, rel=1e-12)
    with pytest.raises(ValueError):
        expected_round_weight(0.05, 0.05, 3, 10, 3)


def test_expected_round_weight_monotone_and_pure():
    vals = [expected_round_weight(0.3, 0.24, ell, 50, 3) for ell in range(40)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert expected_round_weight(0.3, 0.24, 7, 50, 3) == expected_round_weight(0.3, 0.24, 7, 50, 3)
    near = [expected_round_weight(0.3 + d, 0.24, 7, 50, 3) for d in (-1e-9, 0, 1e-9)]
    assert max(near) - min(near) < 1e-10


def test_floored_weight_formula():
    p = PackingParams(n=30, regime="desk", rounds=1)
    sizes = p.schedule()
    direct = sum(p.delta_ / s**2 * (s / 30) ** 3 for s in sizes[:-1])
    assert floored_round_weight(p) == pytest.approx(direct, rel=1e-12)


def test_isolated_bound_example():
    r = isolated_prob_bound(40, 3, 0.25, 0.05)
    # (0.25 - 0.05 / 2) / 40^2
    assert r.lower == pytest.approx(1.40625e-4, rel=1e-12)
    assert not r.regime_ok


def test_isolated_bound_grid():
    k = 3
    checked = 0
    for delta in [0.001, 0.005, 0.01, 0.02, 0.03]:
        beta = 10 * k * delta**2
        for m in [2, 3, 5, 10, 20, 50, 100, 400]:
            r = isolated_prob_bound(m, k, delta, beta)  # asserts inside the regime
            if r.regime_ok:
                checked += 1
                assert r.exact >= r.lower
    assert checked > 10


def test_isolated_bound_limit_trend():
    delta, k = 0.02, 3
    ratios = [isolated_prob_bound(m, k, delta, 0.012).exact / (delta / m ** (k - 1))
              for m in (10, 100, 1000, 10000)]
    # approaches exp(-k delta) from above
    assert all(a > b for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] == pytest.approx(math.exp(-k * delta), rel=1e-3)


def _report(seed, verdict, n=30):
    return {"config": {"params": {"n": n, "seed": seed}}, "audits": {"verdicts": {"c": verdict}}}


def test_empirical_concentration():
    rates = empirical_concentration([_report(s, True) for s in range(5)])
    assert rates["c"].rate == 1.0
    rates = empirical_concentration([_report(s, s % 2 == 0) for s in range(10)])
    assert rates["c"].rate == 0.5 and rates["c"].low < 0.5 < rates["c"].high
    with pytest.raises(ValueError):
        empirical_concentration([_report(0, True)])
    with pytest.raises(ValueError):
        empirical_concentration([_report(0, True), _report(1, True, n=60)])


def test_wilson_interval_reference():
    r = pass_rate("x", [True] * 8 + [False] * 2)
    # Wilson 95% for 8/10
    assert r.low == pytest.approx(0.4901625, abs=1e-6)
    assert r.high == pytest.approx(0.9433178, abs=1e-6)


def test_calibrated_p_and_table():
    p = PackingParams(n=60, regime="desk", rounds=10)
    c05 = calibrated_p(p, 0.05)
    c01 = calibrated_p(p, 0.01)
    assert c01 > c05 > 10 * floored_round_weight(p)
    t = bound_table(p)
    assert t["expected_round_weight_floored"] == floored_round_weight(p)
    assert t["leftover_count_bound"] == pytest.approx(2 * (23 / 60) ** 3 * 10)
    assert set(t) >= {"sum_side", "target_side"}
