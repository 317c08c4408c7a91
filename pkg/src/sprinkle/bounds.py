"""Closed-form quantities, concentration bounds and ensemble pass rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from statsmodels.stats.proportion import proportion_confint

from .core import PackingParams, bite_size


def hoeffding_bound(ranges: Sequence[tuple[float, float]], lam: float) -> float:
    """``P(|S - E S| >= lam) <= 2 exp(-2 lam^2 / sum (b - a)^2)`` for independent
    summands with ``a <= X <= b``; clamped to ``[0, 2]``."""
    if not ranges:
        raise ValueError("need at least one range")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    width2 = 0.0
    for a, b in ranges:
        if b < a:
            raise ValueError(f"malformed range [{a}, {b}]")
        width2 += (b - a) ** 2
    if width2 == 0:
        return 2.0 if lam == 0 else 0.0
    return min(2.0, max(0.0, 2.0 * math.exp(-2.0 * lam * lam / width2)))


def hoeffding_deviation(width2: float, target: float) -> float:
    """Smallest ``lam`` with ``2 exp(-2 lam^2 / width2) <= target``."""
    if target >= 2:
        return 0.0
    return math.sqrt(width2 * math.log(2.0 / target) / 2.0)


def expected_round_weight(delta: float, beta: float, ell: int, n: int, k: int) -> float:
    """Mean per-round exposure of a fixed edge, ideal geometric schedule:
    ``(delta / n^(k-1)) (1 - (1-delta+beta)^ell) / (delta - beta)``."""
    if delta <= beta:
        raise ValueError("need delta > beta")
    if ell < 0:
        raise ValueError("ell must be >= 0")
    return (delta / n ** (k - 1)) * (1 - (1 - delta + beta) ** ell) / (delta - beta)


def floored_round_weight(params: PackingParams) -> float:
    """Same mean under the floored schedule actually run.

    A uniformly random uncovered set of size ``n_s`` per part makes an edge
    relevant at step ``s`` with probability ``(n_s/n)^k``; times
    ``delta / n_s^(k-1)`` this is ``delta n_s / n^k``.
    """
    n, k = params.n, params.k
    sizes = params.schedule()
    total = 0.0
    for n_s in sizes[:-1]:
        if bite_size(params.bite_rate, n_s) >= 1:
            total += params.delta_ * n_s / n**k
    return total


@dataclass(frozen=True)
class IsolatedBound:
    exact: float
    lower: float
    regime_ok: bool


def isolated_prob_bound(m: int, k: int, delta: float, beta: float) -> IsolatedBound:
    """Probability that a fixed edge of ``H(m x k, delta/m^(k-1))`` is isolated,
    exactly and via the ``(delta - beta/2) m^-(k-1)`` lower bound.

    ``regime_ok`` is the condition under which the chain of inequalities leading
    to the lower bound is valid: ``delta^2 (m^k - (m-1)^k) / m^(k-1) <= beta/2``.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    q = delta / m ** (k - 1)
    others = m**k - (m - 1) ** k
    exact = q * math.exp(others * math.log1p(-q))
    lower = (delta - beta / 2) / m ** (k - 1)
    regime_ok = delta * delta * others / m ** (k - 1) <= beta / 2
    if regime_ok and exact < lower:
        raise AssertionError(f"exact {exact} below lower bound {lower} inside the regime")
    return IsolatedBound(exact, lower, regime_ok)


def leftover_count_bound(n_left: int, n: int, k: int, rounds: int) -> float:
    """At most this many leftover blocks should contain any fixed edge."""
    return 2 * (n_left / n) ** k * rounds


def per_round_weight_range(params: PackingParams) -> float:
    """Deterministic cap on one round's summed exposure of an edge."""
    sizes = params.schedule()
    cap = sum(params.step_probability(s) for s in sizes[:-1]
              if bite_size(params.bite_rate, s) >= 1)
    return cap * (1 + params.max_bite_retries) + params.q2_


def per_round_mean_weight(params: PackingParams) -> float:
    n_left = params.schedule()[-1]
    return floored_round_weight(params) + params.q2_ * (n_left / params.n) ** params.k


def calibrated_p(params: PackingParams, eta: float = 0.05) -> float:
    """Smallest target probability the Hoeffding + union-bound argument certifies.

    Sums independent per-round weights (mean ``per_round_mean_weight``, range
    ``[0, per_round_weight_range]``) over ``N`` rounds, then asks for a
    deviation whose two-sided tail, union-bounded over all ``n^k`` edges, is at
    most ``eta``. Valid at any scale; informative only when ``N`` is large.
    """
    N = params.n_rounds
    b = per_round_weight_range(params)
    lam = hoeffding_deviation(N * b * b, eta / params.n**params.k)
    return min(1.0, N * per_round_mean_weight(params) + lam)


def bound_table(params: PackingParams) -> dict:
    n, k = params.n, params.k
    sizes = params.schedule()
    n_left = sizes[-1]
    ideal = expected_round_weight(params.delta_, params.beta_, params.ell_, n, k)
    floored = floored_round_weight(params)
    m = max(2, n_left)
    iso = isolated_prob_bound(m, k, params.delta_, params.beta_)
    return {
        "expected_round_weight_ideal": ideal,
        "expected_round_weight_floored": floored,
        "flooring_gap_rel": (floored - ideal) / ideal if ideal else 0.0,
        "isolated_prob_at_n_left": {"m": m, "exact": iso.exact, "lower": iso.lower,
                                    "regime_ok": iso.regime_ok},
        "leftover_count_bound": leftover_count_bound(n_left, n, k, params.n_rounds),
        "phase2_weight_bound": leftover_count_bound(n_left, n, k, params.n_rounds) * params.q2_,
        "per_round_weight_range": per_round_weight_range(params),
        "calibrated_p_eta_0.05": calibrated_p(params, 0.05),
        "sum_side": (1 + params.gamma) * ideal * params.n_rounds,
        "target_side": (1 - params.epsilon) * params.p,
    }


@dataclass(frozen=True)
class PassRate:
    claim: str
    passes: int
    total: int
    rate: float
    low: float
    high: float

    def to_dict(self) -> dict:
        return {"claim": self.claim, "passes": self.passes, "total": self.total,
                "rate": self.rate, "wilson95": [self.low, self.high]}


def pass_rate(claim: str, verdicts: Iterable[bool]) -> PassRate:
    v = [bool(x) for x in verdicts]
    if not v:
        raise ValueError("no verdicts")
    s = sum(v)
    low, high = proportion_confint(s, len(v), alpha=0.05, method="wilson")
    return PassRate(claim, s, len(v), s / len(v), float(low), float(high))


def _config_key(report: dict) -> dict:
    cfg = dict(report["config"]["params"])
    cfg.pop("seed", None)
    return cfg


def empirical_concentration(reports: Sequence[dict], claims: Sequence[str] | None = None) -> dict[str, PassRate]:
    """Per-claim pass rates with Wilson 95% intervals over a seed ensemble."""
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    ref = _config_key(reports[0])
    for r in reports[1:]:
        if _config_key(r) != ref:
            raise ValueError("reports were produced with different parameters")
    if claims is None:
        claims = sorted(reports[0]["audits"]["verdicts"])
    return {c: pass_rate(c, (r["audits"]["verdicts"][c] for r in reports)) for c in claims}
