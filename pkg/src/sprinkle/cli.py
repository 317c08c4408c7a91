"""Command-line entry point: runs, ensembles, bound tables and report verification.

Exit codes: 0 success, 1 audit failure under ``--strict``, 2 configuration
error, 3 matching search hit its budget.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import bounds
from .completion import COMPLETION_CSV_HEADER
from .core import ParamError, PackingParams, decode_edges, pairwise_disjoint, validate_matching
from .nibble import CSV_HEADER, run_round
from .packing import SCHEMA_VERSION, build_report, pack_partite

MODES = ("partite-pack", "nonpartite-pack", "round-only", "bounds", "ensemble", "verify")
EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sprinkle", description=__doc__.splitlines()[0])
    ap.add_argument("--mode", choices=MODES, default="partite-pack")
    ap.add_argument("--n", type=int)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--p", default="1.0", help='target edge probability, or "auto" (calibrated)')
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--beta", type=float, help="desk regime only")
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--q2", type=float)
    ap.add_argument("--gamma", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=1, help="ensemble size (seeds seed, seed+1, ...)")
    ap.add_argument("--regime", choices=("asymptotic", "desk"), default="asymptotic")
    ap.add_argument("--rounds", type=int, help="override N (desk regime only)")
    ap.add_argument("--ell", type=int)
    ap.add_argument("--retries", type=int, default=0, help="bite retries per step")
    ap.add_argument("--rounding", choices=("floor", "stochastic"), default="floor")
    ap.add_argument("--t", type=int, default=1, help="partitions (nonpartite-pack)")
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--report", type=Path, help="report to check (verify)")
    ap.add_argument("--strict", action="store_true")
    ap.add_argument("--dense-ledger", choices=("auto", "on", "off"), default="auto")
    ap.add_argument("--normalize", action="store_true", help="drop wall-clock fields")
    ap.add_argument("--include-retried", action="store_true",
                    help="ensemble: count runs that used bite retries in the pass rates")
    ap.add_argument("--workers", type=int, help="processes for ensemble (default SPRINKLE_THREADS)")
    ap.add_argument("--hoeffding", nargs=3, type=float, metavar=("COUNT", "WIDTH", "LAMBDA"),
                    help="bounds mode: COUNT variables with range width WIDTH, deviation LAMBDA")
    return ap


def params_from_args(args, seed: int | None = None) -> PackingParams:
    if args.n is None:
        raise ConfigError("n", "required")
    auto = str(args.p).lower() == "auto"
    if auto and args.rounds is None:
        raise ConfigError("p", '"auto" needs --rounds (N cannot be derived from p)')
    try:
        p = 1.0 if auto else float(args.p)
    except ValueError:
        raise ConfigError("p", f"not a number: {args.p!r}") from None
    if not 0 < p <= 1:
        raise ConfigError("p", "must lie in (0, 1]")
    params = PackingParams(
        n=args.n, k=args.k, p=p, epsilon=args.epsilon, delta=args.delta, beta=args.beta,
        alpha=args.alpha, q2=args.q2, gamma=args.gamma,
        seed=args.seed if seed is None else seed, regime=args.regime, rounds=args.rounds,
        ell=args.ell, max_bite_retries=args.retries, rounding=args.rounding,
    )
    if auto:
        params = replace(params, p=bounds.calibrated_p(params))
    return params


def _dense(args) -> bool | None:
    return {"auto": None, "on": True, "off": False}[args.dense_ledger]


def dumps(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_outputs(out: Path, report: dict, result=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report))
    if "bounds" in report:
        (out / "bounds.json").write_text(dumps(report["bounds"]))
    if result is None:
        return
    with open(out / "steps.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for o in result.outcomes:
            for d in o.steps:
                w.writerow(d.row())
    with open(out / "completion.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(COMPLETION_CSV_HEADER)
        for i in sorted(result.completions):
            w.writerow(result.completions[i].row())


def run_partite(params: PackingParams, dense=None, normalize=False):
    result = pack_partite(params, dense=dense)
    return result, build_report(result, "partite-pack", normalize=normalize)


def _ensemble_member(job):
    params, dense = job
    _, report = run_partite(params, dense, normalize=True)
    report.pop("matchings", None)
    return report


def run_ensemble(params: PackingParams, seeds: list[int], dense=None, workers: int = 1,
                 include_retried: bool = False) -> dict:
    """Run every seed and tabulate per-claim pass rates.

    Runs that needed a bite retry are left out of the rates unless
    ``include_retried``; they are still listed under ``runs``.
    """
    jobs = [(replace(params, seed=s), dense) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_ensemble_member, jobs))
    else:
        reports = [_ensemble_member(j) for j in jobs]
    counted = [r for r in reports if include_retried or r["audits"]["retries"] == 0]
    rates = bounds.empirical_concentration(counted) if len(counted) >= 2 else {}
    return {
        "schema_version": SCHEMA_VERSION,
        "config": {"mode": "ensemble", "params": params.to_dict(), "derived": params.derived(),
                   "seeds": seeds},
        "pass_rates": {c: r.to_dict() for c, r in rates.items()},
        "counted_runs": len(counted),
        "runs": [{"seed": s, "verdicts": r["audits"]["verdicts"],
                  "bite_failures": r["audits"]["bite_failures"], "retries": r["audits"]["retries"],
                  "max_weight": r["audits"]["coupling"]["max_weight"],
                  "collisions": len(r["audits"]["disjointness"]["collisions"])}
                 for s, r in zip(seeds, reports)],
        "bounds": bounds.bound_table(params),
    }


def round_only_report(params: PackingParams) -> dict:
    rounds = []
    for i in range(params.n_rounds):
        o = run_round(i, params)
        rounds.append({
            "round": i, "failed": o.failed, "failure_step": o.failure_step, "retries": o.retries,
            "sizes": o.sizes, "matching": o.matching.tolist(),
            "leftover": None if o.leftover is None else [s.tolist() for s in o.leftover],
            "steps": [dict(zip(CSV_HEADER, d.row())) for d in o.steps],
        })
    return {"schema_version": SCHEMA_VERSION,
            "config": {"mode": "round-only", "params": params.to_dict(), "derived": params.derived()},
            "rounds": rounds}


@dataclass
class VerifyResult:
    ok: bool
    structural: bool
    disjoint: bool
    problems: list[dict]


def verify_report(report: dict) -> VerifyResult:
    """Re-check stored matchings using only the serialized data."""
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"schema mismatch: {report.get('schema_version')!r} != {SCHEMA_VERSION}")
    if "matchings" not in report:
        raise ValueError("report has no stored matchings")
    store = report["matchings"]
    n, k = int(store["n"]), int(store["k"])
    problems = []
    decoded = []
    for item in store["items"]:
        try:
            edges = decode_edges(item["edges"], n, k)
        except ValueError as exc:
            problems.append({"round": item["round"], "reason": str(exc)})
            decoded.append(np.empty((0, k), dtype=np.int64))
            continue
        v = validate_matching(edges, n, require_perfect=bool(item["perfect"]))
        if not v:
            problems.append({"round": item["round"], "reason": v.reason, "part": v.part,
                             "vertex": v.vertex})
        decoded.append(edges)
    structural = not problems
    dis = pairwise_disjoint(decoded)
    rounds = [item["round"] for item in store["items"]]
    for e, idx in dis.collisions:
        problems.append({"edge": list(e), "rounds": [rounds[j] for j in idx],
                         "reason": "edge shared by several matchings"})
    return VerifyResult(structural and dis.ok, structural, dis.ok, problems)


def _exit_for(report: dict, strict: bool) -> int:
    audits = report.get("audits", {})
    if audits.get("budget_exhausted", 0):
        return EXIT_BUDGET
    if strict and not all(audits.get("verdicts", {}).values()):
        return EXIT_AUDIT
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _main(args)
    except (ConfigError, ParamError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _emit(args, report: dict, result=None) -> None:
    if args.out is not None:
        write_outputs(args.out, report, result)
    else:
        sys.stdout.write(dumps(report))


def _main(args) -> int:
    if args.mode == "verify":
        if args.report is None:
            raise ConfigError("report", "required in verify mode")
        try:
            report = json.loads(args.report.read_text())
            res = verify_report(report)
        except (OSError, ValueError, KeyError) as exc:
            print(f"verify: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps({"ok": res.ok, "structural": res.structural, "disjoint": res.disjoint,
                          "problems": res.problems[:20]}, indent=1))
        return EXIT_OK if res.ok else EXIT_AUDIT

    params = params_from_args(args)
    dense = _dense(args)

    if args.mode == "bounds":
        report = {"schema_version": SCHEMA_VERSION,
                  "config": {"mode": "bounds", "params": params.to_dict(), "derived": params.derived()},
                  "bounds": bounds.bound_table(params)}
        if args.hoeffding:
            count, width, lam = args.hoeffding
            report["hoeffding"] = {"count": int(count), "width": width, "lambda": lam,
                                   "bound": bounds.hoeffding_bound([(0.0, width)] * int(count), lam)}
        _emit(args, report)
        return EXIT_OK

    if args.mode == "round-only":
        _emit(args, round_only_report(params))
        return EXIT_OK

    if args.mode == "partite-pack":
        result, report = run_partite(params, dense, args.normalize)
        _emit(args, report, result)
        return _exit_for(report, args.strict)

    if args.mode == "nonpartite-pack":
        from .reductions import pack_nonpartite

        res = pack_nonpartite(args.k * args.n, args.k, params.p, params, t=args.t)
        report = {"schema_version": SCHEMA_VERSION,
                  "config": {"mode": "nonpartite-pack", "params": params.to_dict(),
                             "derived": params.derived(), "t": args.t},
                  "nonpartite": res.report()}
        _emit(args, report)
        ok = res.disjoint and all(res.perfect)
        budget = sum(r.audits["budget_exhausted"] for r in res.results)
        if budget:
            return EXIT_BUDGET
        return EXIT_AUDIT if args.strict and not ok else EXIT_OK

    # ensemble
    if args.seeds < 1:
        raise ConfigError("seeds", "must be >= 1")
    seeds = list(range(args.seed, args.seed + args.seeds))
    workers = args.workers if args.workers is not None else int(os.environ.get("SPRINKLE_THREADS", "1") or 1)
    if workers <= 0:
        workers = os.cpu_count() or 1
    if args.strict:
        for s in seeds:
            _, report = run_partite(replace(params, seed=s), dense, normalize=True)
            code = _exit_for(report, True)
            if code:
                print(f"seed {s}: audit failure {report['audits']['verdicts']}", file=sys.stderr)
                return code
    report = run_ensemble(params, seeds, dense, workers, args.include_retried)
    _emit(args, report)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
