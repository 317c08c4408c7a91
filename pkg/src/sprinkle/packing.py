"""The full k-partite pipeline: Phase 1, Phase 2 and every runtime audit."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import bounds
from .completion import BUDGET, Completion, phase2_complete
from .core import PackingParams, canonical, encode_edges, pairwise_disjoint, validate_matching
from .exposure import ExposureLedger, HostFilter, audit_coupling
from .nibble import NibbleOutcome, phase1

SCHEMA_VERSION = 1
MATCHING_STORE_LIMIT = 2_000_000  # total stored edges


@dataclass
class PackingResult:
    params: PackingParams
    outcomes: list[NibbleOutcome]
    completions: dict[int, Completion]
    ledger: ExposureLedger
    matchings: dict[int, np.ndarray]  # round -> M_i u Q_i (or M_i if completion failed)
    audits: dict
    wall_seconds: float

    @property
    def perfect_rounds(self) -> list[int]:
        return [i for i, c in self.completions.items() if c.success]


def leftover_counts(outcomes: list[NibbleOutcome], n: int, k: int) -> np.ndarray:
    """``#{i : e in U_i}`` for every edge, canonical index order."""
    counts = np.zeros(n**k, dtype=np.int64)
    view = counts.reshape((n ** (k - 1), n))
    for o in outcomes:
        if o.leftover is None:
            continue
        ind = [np.isin(np.arange(n), s) for s in o.leftover]
        rest = ind[1]
        for a in ind[2:]:
            rest = np.logical_and.outer(a, rest).reshape(-1)
        view[:, ind[0]] += rest[:, None]
    return counts


def schedule_exact(outcomes: list[NibbleOutcome], params: PackingParams) -> bool:
    if params.rounding != "floor":
        return True
    ref = params.schedule()
    return all(o.sizes == ref[: len(o.sizes)] for o in outcomes)


def pack_partite(params: PackingParams, workers: int | None = None,
                 dense: bool | None = None, host: HostFilter | None = None) -> PackingResult:
    t0 = time.perf_counter()
    ph1 = phase1(params, workers=workers, dense=dense, host=host)
    ledger = ph1.ledger
    completions: dict[int, Completion] = {}
    for o in ph1.outcomes:
        if o.failed:
            continue
        comp = phase2_complete(o, params, host=host)
        ledger.merge(comp.shard)
        completions[o.round_index] = comp

    matchings: dict[int, np.ndarray] = {}
    for o in ph1.outcomes:
        if o.failed:
            continue
        comp = completions[o.round_index]
        parts = [o.matching] + ([comp.matching] if comp.success else [])
        matchings[o.round_index] = canonical(np.concatenate(parts))

    audits = run_audits(params, ph1.outcomes, completions, ledger, matchings)
    return PackingResult(params, ph1.outcomes, completions, ledger, matchings, audits,
                         time.perf_counter() - t0)


def run_audits(params, outcomes, completions, ledger, matchings) -> dict:
    n, k = params.n, params.k
    perfect = {i: m for i, m in matchings.items() if completions[i].success}

    # Phase-1 bites stay inside the uncovered product; Q_i inside the leftover.
    structural = {i: validate_matching(m, n, require_perfect=True) for i, m in perfect.items()}
    partial_ok = all(validate_matching(o.matching, n) for o in outcomes if not o.failed)
    disjoint = pairwise_disjoint([matchings[i] for i in sorted(matchings)])
    disjoint_p1 = pairwise_disjoint([o.matching for o in outcomes if not o.failed])

    coupling = audit_coupling(ledger, params.p, params.epsilon, params.gamma)

    counts = leftover_counts(outcomes, n, k)
    finished = [o for o in outcomes if not o.failed]
    n_left = float(np.mean([o.n_left for o in finished])) if finished else float(params.schedule()[-1])
    bound = bounds.leftover_count_bound(n_left, n, k, params.n_rounds)
    max_count = int(counts.max()) if counts.size else 0
    argmax = int(np.argmax(counts)) if counts.size else 0
    phase2_surv = ledger.compressed_survival("blocks") if n**k <= 1 << 24 else None
    phase2_max = float(1.0 - phase2_surv.min()) if phase2_surv is not None and phase2_surv.size else 0.0
    phase2_sum_ok = True
    if phase2_surv is not None:
        phase2_sum_ok = bool(np.all(1.0 - phase2_surv <= counts * params.q2_ * (1 + 1e-12)))

    exact = ledger.exact_match() if ledger.dense_enabled else None
    failures = sum(o.failed for o in outcomes)
    retries = sum(o.retries for o in outcomes)
    budget = sum(c.search.status == BUDGET for c in completions.values())

    verdicts = {
        "structural": all(bool(v) for v in structural.values()) and partial_ok,
        "disjoint": disjoint.ok,
        "coupling": coupling.passed,
        "sum_product": coupling.sum_bound_ok,
        "leftover_count": max_count <= bound,
        "phase2_weight": phase2_sum_ok and phase2_max <= bound * params.q2_ * (1 + 1e-12),
        "schedule": schedule_exact(outcomes, params),
    }
    if exact is not None:
        verdicts["ledger_exact"] = exact
    return {
        "verdicts": verdicts,
        "structural": {
            "checked": len(structural),
            "violations": [{"round": i, "reason": v.reason, "part": v.part, "vertex": v.vertex}
                           for i, v in structural.items() if not v],
        },
        "disjointness": {
            "matchings": len(matchings),
            "collisions": [{"edge": list(e), "rounds": [sorted(matchings)[j] for j in idx]}
                           for e, idx in disjoint.collisions],
            "phase1_only_ok": disjoint_p1.ok,
        },
        "coupling": coupling.to_dict(),
        "leftover": {
            "max_count": max_count,
            "argmax_edge": [int(v) for v in np.unravel_index(argmax, (n,) * k, order="F")],
            "bound": bound,
            "residual_fraction": n_left / n,
            "phase2_max_weight": phase2_max,
            "phase2_weight_bound": bound * params.q2_,
        },
        "bite_failures": failures,
        "retries": retries,
        "completion_failures": sum(not c.success for c in completions.values()),
        "budget_exhausted": budget,
        "rounds_total": len(outcomes),
        "perfect_matchings": len(perfect),
    }


def build_report(result: PackingResult, mode: str = "partite-pack", normalize: bool = False,
                 store_matchings: bool = True) -> dict:
    params = result.params
    rounds = []
    for o in result.outcomes:
        c = result.completions.get(o.round_index)
        rounds.append({
            "round": o.round_index,
            "failed": o.failed,
            "failure_step": o.failure_step,
            "retries": o.retries,
            "sizes": o.sizes,
            "phase1_size": int(len(o.matching)),
            "completion": None if c is None else {
                "n_left": c.n_left, "exposed": c.exposed, "status": c.search.status,
                "restarts": c.search.restarts, "nodes": c.search.nodes,
            },
        })
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": {"mode": mode, "params": params.to_dict(), "derived": params.derived()},
        "provenance": {
            "seed": params.seed,
            "rng": "numpy PCG64 per batch, seeded by SplitMix64 folding of (seed, tag, round, step, attempt)",
        },
        "rounds": rounds,
        "audits": result.audits,
        "bounds": bounds.bound_table(params),
    }
    total_edges = sum(len(m) for m in result.matchings.values())
    if store_matchings and total_edges <= MATCHING_STORE_LIMIT:
        report["matchings"] = {
            "encoding": "base-n, part 0 least significant",
            "n": params.n,
            "k": params.k,
            "items": [
                {"round": i, "perfect": result.completions[i].success,
                 "edges": encode_edges(m, params.n).tolist()}
                for i, m in sorted(result.matchings.items())
            ],
        }
    if not normalize:
        report["timing"] = {"wall_seconds": result.wall_seconds}
    return report
