"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Desk scale: k = 3, n in [30, 90], N = 10 rounds, 200 seeds. Criteria 1-5 and
the leftover-count half of 7 share one 200-seed ensemble at n = 60.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from sprinkle.bounds import (
    calibrated_p,
    expected_round_weight,
    floored_round_weight,
    hoeffding_bound,
)
from sprinkle.cli import dumps, run_ensemble
from sprinkle.completion import FOUND, find_perfect_matching, pm_oracle_exhaustive
from sprinkle.core import PackingParams
from sprinkle.montecarlo import estimate_round_weight, relevance_frequency, uncovered_frequency
from sprinkle.nibble import run_round
from sprinkle.packing import build_report, pack_partite

SEEDS = 200
ENSEMBLE_N = 60
ROUNDS = 10
MC_ROUNDS = 10_000

RESULTS: dict[str, bool] = {}


def report(capsys, cid: str, ok: bool, detail: str) -> None:
    RESULTS[cid] = ok
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {cid}: {detail}")


def desk_params(n=ENSEMBLE_N, seed=0, **kw):
    base = PackingParams(n=n, regime="desk", rounds=ROUNDS, seed=seed, **kw)
    return PackingParams(**{**base.to_dict(), "p": calibrated_p(base)})


@pytest.fixture(scope="module")
def ensemble():
    t0 = time.perf_counter()
    params = desk_params()
    runs = []
    for s in range(SEEDS):
        res = pack_partite(PackingParams(**{**params.to_dict(), "seed": s}))
        a = res.audits
        runs.append({
            "verdicts": a["verdicts"],
            "collisions": len(a["disjointness"]["collisions"]),
            "max_weight": a["coupling"]["max_weight"],
            "total_ok": a["coupling"]["total_ok"],
            "sum_violations": a["coupling"]["sum_bound_violations"],
            "max_count": a["leftover"]["max_count"],
            "count_bound": a["leftover"]["bound"],
            "rounds_ok": ROUNDS - a["bite_failures"],
            "perfect": a["perfect_matchings"],
            "structural_checked": a["structural"]["checked"],
        })
    return {"params": params, "runs": runs, "seconds": time.perf_counter() - t0}


def rate(runs, key):
    return sum(bool(r[key]) for r in runs) / len(runs)


# 1 ---------------------------------------------------------------------------
def test_c1_structural_validity(ensemble, capsys):
    runs = ensemble["runs"]
    ok = all(r["verdicts"]["structural"] for r in runs)
    checked = sum(r["structural_checked"] for r in runs)
    report(capsys, "1", ok, f"{checked} completed matchings over {SEEDS} seeds, "
           f"structural pass rate {rate([r['verdicts'] for r in runs], 'structural'):.3f} "
           f"(ensemble {ensemble['seconds']:.0f}s)")
    assert ok


# 2 ---------------------------------------------------------------------------
def test_c2_disjointness(ensemble, capsys):
    runs = ensemble["runs"]
    r = sum(x["verdicts"]["disjoint"] for x in runs) / SEEDS
    mean_rounds = np.mean([x["rounds_ok"] for x in runs])
    mean_coll = np.mean([x["collisions"] for x in runs])
    report(capsys, "2", r >= 0.95,
           f"disjoint in {r:.3f} of {SEEDS} seeds (need >= 0.95); n={ENSEMBLE_N}, N={ROUNDS}, "
           f"{mean_rounds:.2f} completed rounds/seed, {mean_coll:.3f} shared edges/seed")
    assert r >= 0.95


# 3 ---------------------------------------------------------------------------
def test_c3_coupling(ensemble, capsys):
    runs = ensemble["runs"]
    p = ensemble["params"].p
    r = sum(x["total_ok"] for x in runs) / SEEDS
    sums_ok = all(x["sum_violations"] == 0 for x in runs)
    worst = max(x["max_weight"] for x in runs)
    ok = r >= 0.95 and sums_ok
    report(capsys, "3", ok, f"max weight <= p={p:.4f} in {r:.3f} of seeds (worst {worst:.4f}); "
           f"sum-product relation on every edge: {sums_ok}")
    assert ok


# 4 ---------------------------------------------------------------------------
def test_c4_ledger_exactness(ensemble, capsys):
    runs = ensemble["runs"]
    ok_ens = all(x["verdicts"]["ledger_exact"] for x in runs)
    extra = []
    for n, kw in [(8, dict(delta=0.5, beta=0.2, max_bite_retries=3)),
                  (30, dict(max_bite_retries=2)), (90, {})]:
        for seed in range(3):
            p = PackingParams(n=n, regime="desk", rounds=5, seed=seed, **kw)
            res = pack_partite(p, dense=True)
            extra.append(res.ledger.exact_match())
    ok = ok_ens and all(extra)
    report(capsys, "4", ok, f"compressed == dense on {SEEDS} ensemble ledgers ({ok_ens}) and "
           f"{len(extra)} extra instances incl. retries and n=90 ({all(extra)})")
    assert ok


# 5 ---------------------------------------------------------------------------
def test_c5_schedule_exactness(ensemble, capsys):
    runs = ensemble["runs"]
    floor_ok = all(x["verdicts"]["schedule"] for x in runs)
    # integral bites: rate 1/10 at n = 1000 gives 1000, 900, 810, 729
    p = PackingParams(n=1000, regime="desk", delta=0.3, beta=0.2, alpha=0.75, rounds=1,
                      max_bite_retries=5)
    r = 1 - Fraction("0.3") + Fraction("0.2")
    closed_checked = 0
    closed_ok = True
    for i in range(20):
        o = run_round(i, p)
        if o.failed:
            continue
        n_j = Fraction(1000)
        for j, size in enumerate(o.sizes):
            if j > 0 and (p.bite_rate * o.sizes[j - 1]).denominator != 1:
                break
            closed_checked += 1
            closed_ok &= size == n_j
            n_j *= r
    ok = floor_ok and closed_ok and closed_checked > 0
    report(capsys, "5", ok, f"floored recurrence matched in all {SEEDS} seeds ({floor_ok}); "
           f"closed form matched on {closed_checked} integral steps ({closed_ok})")
    assert ok


# 6 ---------------------------------------------------------------------------
def test_c6_expected_round_weight(capsys):
    n = 30
    ideal_p = PackingParams(n=n, regime="desk", rounds=1, rounding="stochastic")
    floor_p = PackingParams(n=n, regime="desk", rounds=1)
    closed = expected_round_weight(floor_p.delta_, floor_p.beta_, floor_p.ell_, n, 3)
    est_ideal = estimate_round_weight(ideal_p, MC_ROUNDS)
    est_floor = estimate_round_weight(floor_p, MC_ROUNDS)
    gap_i = (est_ideal.mean - closed) / closed
    gap_f = (est_floor.mean - closed) / closed
    exact_floor = floored_round_weight(floor_p)
    ok = abs(gap_i) <= 0.10 and abs(gap_f) <= 0.15
    report(capsys, "6", ok,
           f"closed form {closed:.4e}; stochastic-rounding MC {est_ideal.mean:.4e} "
           f"({gap_i:+.2%}, need |.| <= 10%); floored MC {est_floor.mean:.4e} ({gap_f:+.2%}, "
           f"need <= 15%); flooring gap (exact floored mean {exact_floor:.4e}) "
           f"{(exact_floor - closed) / closed:+.2%}")
    assert ok


# 7 ---------------------------------------------------------------------------
def test_c7_uncovered_uniformity(ensemble, capsys):
    p = PackingParams(n=30, regime="desk", rounds=1)
    u = uncovered_frequency(p, MC_ROUNDS)
    worst = float(np.abs(u.z).max())
    uniform_ok = u.all_within(3.0)
    # informational joint check (approximate: each part loses one dof to its fixed total)
    chi2 = float((u.z**2).sum())
    pval = float(stats.chi2.sf(chi2, 3 * 29))
    runs = ensemble["runs"]
    lc = sum(x["verdicts"]["leftover_count"] for x in runs) / SEEDS
    bound = runs[0]["count_bound"]
    max_counts = [x["max_count"] for x in runs]
    ok = uniform_ok and lc >= 0.95
    report(capsys, "7", ok,
           f"U-membership: worst |z| = {worst:.2f} over {3 * 30} vertices (need <= 3), "
           f"target n_l/n = {u.target:.4f}, joint chi2 = {chi2:.1f} on 87 dof (p = {pval:.2f}); "
           f"leftover-count audit passes in {lc:.3f} of seeds "
           f"(need >= 0.95), bound 2(n_l/n)^3 N = {bound:.3f}, median max count "
           f"{int(np.median(max_counts))}")
    assert ok


# 8 ---------------------------------------------------------------------------
def test_c8_relevance_probability(capsys):
    est = relevance_frequency(3, 1000, 100_000, seed=0)
    target = 2 / 9
    z = (est.mean - target) / est.se
    ok = abs(z) <= 3
    report(capsys, "8", ok, f"rainbow frequency {est.mean:.5f} vs 2/9 = {target:.5f}, "
           f"z = {z:+.2f} over 10^5 samples at kn = 3000")
    assert ok


# 9 ---------------------------------------------------------------------------
def test_c9_solver_oracle(capsys):
    rng = np.random.default_rng(2024)
    agree = 0
    total = 10_000
    found = 0
    for _ in range(total):
        m = int(rng.integers(1, 6))
        block = np.array(np.meshgrid(*[np.arange(m)] * 3, indexing="ij")).reshape(3, -1).T
        density = rng.uniform(0.02, 0.6)
        edges = block[rng.random(len(block)) < density]
        exists, _ = pm_oracle_exhaustive(m, edges, 3)
        res = find_perfect_matching(m, edges, 3, rng=rng)
        agree += (res.status == FOUND) == exists
        found += exists
    ok = agree == total
    report(capsys, "9", ok, f"{agree}/{total} agree ({found} instances with a perfect matching)")
    assert ok


# 10 --------------------------------------------------------------------------
def test_c10_bound_formulas(capsys):
    cases = [
        (hoeffding_bound([(0, 1)] * 100, 20), 2 * math.exp(-8)),
        (hoeffding_bound([(0, 2)] * 25, 10), 2 * math.exp(-2)),
        (hoeffding_bound([(0, 1)] * 100, 0), 2.0),
    ]
    rel = max(abs(a - b) / b for a, b in cases)
    rng = np.random.default_rng(10)
    mono_ok = True
    for _ in range(1000):
        m = int(rng.integers(1, 30))
        lo = rng.uniform(-3, 3, m)
        widths = rng.uniform(0, 3, m)
        ranges = list(zip(lo, lo + widths))
        l1, l2 = np.sort(rng.uniform(0, 20, 2))
        mono_ok &= hoeffding_bound(ranges, l2) <= hoeffding_bound(ranges, l1)
        i = int(rng.integers(m))
        wider = list(ranges)
        wider[i] = (ranges[i][0], ranges[i][1] + rng.uniform(0, 2))
        mono_ok &= hoeffding_bound(wider, l1) >= hoeffding_bound(ranges, l1)
    ok = rel <= 1e-12 and mono_ok
    report(capsys, "10", ok, f"max relative error {rel:.1e} (need <= 1e-12); "
           f"monotonicity on 1000 random queries: {mono_ok}")
    assert ok


# 11 --------------------------------------------------------------------------
def test_c11_replay_determinism(capsys):
    same = []
    for seed in range(5):
        p = desk_params(n=30, seed=seed)
        a = dumps(build_report(pack_partite(p, workers=1), normalize=True))
        b = dumps(build_report(pack_partite(p, workers=4), normalize=True))
        c = dumps(build_report(pack_partite(p, workers=2), normalize=True))
        same.append(a == b == c)
    base = desk_params(n=30)
    e1 = dumps(run_ensemble(base, list(range(4)), workers=1))
    e2 = dumps(run_ensemble(base, list(range(4)), workers=2))
    ok = all(same) and e1 == e2
    report(capsys, "11", ok, f"run reports identical across 1/2/4 threads for {sum(same)}/5 seeds; "
           f"ensemble identical across 1/2 processes: {e1 == e2}")
    assert ok


def test_zz_summary(capsys):
    with capsys.disabled():
        print("\nacceptance summary: " + json.dumps(
            {k: ("PASS" if v else "FAIL") for k, v in sorted(RESULTS.items(), key=lambda t: int(t[0]))}))
