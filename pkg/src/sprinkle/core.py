"""Domain types: parameters, k-partite edges, matchings and their validators.

Edges are k-tuples with one vertex per part; vertex ``v`` at position ``m``
lives in part ``V_m``. Internally edges travel as ``(count, k)`` int64 arrays.
The canonical integer encoding is base-``n`` positional with part 0 least
significant; serialized matchings are arrays of these indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

REGIMES = ("asymptotic", "desk")
ROUNDINGS = ("floor", "stochastic")

# Desk-scale defaults (k = 3 oriented). See README "Desk regime".
DESK_DELTA = 0.3
DESK_BETA = 0.24
DESK_ALPHA = 0.2


class ParamError(ValueError):
    """Invalid parameter combination. ``field`` names the offending input."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _exact(x: float) -> Fraction:
    # The decimal the caller wrote, not the binary float: 0.25 - 0.05 must be
    # exactly 1/5 so that floor(rate * n_j) never loses an edge to rounding.
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class PackingParams:
    """All scalar inputs of a packing run.

    ``delta``, ``beta``, ``alpha``, ``q2``, ``rounds`` and ``ell`` are optional
    overrides; ``None`` means "derive". In the asymptotic regime ``beta`` is
    always ``10 k delta**2`` and ``rounds``/``beta`` cannot be overridden.
    """

    n: int
    k: int = 3
    p: float = 1.0
    epsilon: float = 0.1
    delta: float | None = None
    beta: float | None = None
    alpha: float | None = None
    q2: float | None = None
    gamma: float = 0.01
    seed: int = 0
    regime: str = "asymptotic"
    rounds: int | None = None
    ell: int | None = None
    allow_k2: bool = False
    max_bite_retries: int = 0
    rounding: str = "floor"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ParamError("regime", f"must be one of {REGIMES}, got {self.regime!r}")
        if self.rounding not in ROUNDINGS:
            raise ParamError("rounding", f"must be one of {ROUNDINGS}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ParamError("n", "must be a positive integer")
        kmin = 2 if self.allow_k2 else 3
        if self.k < kmin:
            raise ParamError("k", f"must be >= {kmin}")
        if not 0 < self.p <= 1:
            raise ParamError("p", "must lie in (0, 1]")
        if not 0 < self.epsilon < 1:
            raise ParamError("epsilon", "must lie in (0, 1)")
        if self.gamma <= 0:
            raise ParamError("gamma", "must be positive")
        if self.max_bite_retries < 0:
            raise ParamError("max_bite_retries", "must be >= 0")
        desk = self.regime == "desk"
        if not desk:
            for name in ("beta", "rounds"):
                if getattr(self, name) is not None:
                    raise ParamError(name, "override only allowed in the desk regime")
        d = self.delta_
        if desk:
            if not 0 < d < 1:
                raise ParamError("delta", "must lie in (0, 1)")
            if not 0 < self.beta_ < d:
                raise ParamError("beta", "must satisfy 0 < beta < delta")
        elif not 0 < d < 1 / (10 * self.k):
            raise ParamError("delta", f"must lie in (0, 1/(10k)) = (0, {1 / (10 * self.k):.4g})")
        a = self.alpha_
        if not 0 < a < 1:
            raise ParamError("alpha", f"must lie in (0, 1), got {a:.4g}")
        if a * self.n < self.k:
            raise ParamError(
                "alpha", f"alpha*n = {a * self.n:.3g} < k; use the desk regime with a larger alpha"
            )
        if self.ell is not None and self.ell < 0:
            raise ParamError("ell", "must be >= 0")
        if self.rounds is not None and self.rounds < 1:
            raise ParamError("rounds", "must be >= 1")
        if self.n_rounds < 1:
            raise ParamError("p", "N = floor((1-epsilon) n^(k-1) p) must be >= 1")
        if desk and self.rounding == "floor" and math.floor(self.bite_rate * _exact(self.alpha_) * self.n) < 1:
            raise ParamError(
                "alpha", "floor((delta-beta)*alpha*n) must be >= 1 so every step has a bite"
            )
        if self.q2 is not None and not 0 < self.q2 <= 1:
            raise ParamError("q2", "must lie in (0, 1]")

    @property
    def delta_(self) -> float:
        if self.delta is not None:
            return float(self.delta)
        return DESK_DELTA if self.regime == "desk" else 1 / (20 * self.k)

    @property
    def beta_(self) -> float:
        if self.regime == "desk":
            return float(self.beta) if self.beta is not None else DESK_BETA
        return 10 * self.k * self.delta_**2

    @property
    def bite_rate(self) -> Fraction:
        """``delta - beta`` as an exact rational."""
        if self.regime == "desk":
            return _exact(self.delta_) - _exact(self.beta_)
        return _exact(self.delta_) - 10 * self.k * _exact(self.delta_) ** 2

    @property
    def alpha_(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        if self.regime == "desk":
            # Smallest alpha >= DESK_ALPHA keeping every floored bite nonempty.
            smallest = math.nextafter(float(1 / (self.bite_rate * self.n)), 1.0)
            return max(DESK_ALPHA, min(0.95, smallest))
        return 1 / math.log(self.n) ** 3 if self.n > 1 else 1.0

    @property
    def ell_(self) -> int:
        if self.ell is not None:
            return int(self.ell)
        return math.ceil(math.log(self.alpha_) / math.log(1 - float(self.bite_rate)))

    @property
    def n_rounds(self) -> int:
        if self.rounds is not None:
            return int(self.rounds)
        return math.floor((1 - self.epsilon) * self.n ** (self.k - 1) * self.p)

    def schedule(self) -> list[int]:
        """Uncovered part sizes ``n_0, ..., n_ell`` under floored bites."""
        return size_schedule(self.n, self.bite_rate, self.ell_)

    @property
    def q2_(self) -> float:
        if self.q2 is not None:
            return float(self.q2)
        if self.regime == "desk":
            return desk_q2(self.schedule()[-1], self.k)
        return min(1.0, math.log(self.n) ** 5 / self.n ** (self.k - 1))

    def step_probability(self, n_j: int) -> float:
        return self.delta_ / n_j ** (self.k - 1)

    def derived(self) -> dict:
        return {
            "delta": self.delta_,
            "beta": self.beta_,
            "bite_rate": str(self.bite_rate),
            "alpha": self.alpha_,
            "ell": self.ell_,
            "N": self.n_rounds,
            "q2": self.q2_,
            "schedule": self.schedule(),
        }

    def to_dict(self) -> dict:
        return {
            "n": self.n, "k": self.k, "p": self.p, "epsilon": self.epsilon,
            "delta": self.delta, "beta": self.beta, "alpha": self.alpha, "q2": self.q2,
            "gamma": self.gamma, "seed": self.seed, "regime": self.regime,
            "rounds": self.rounds, "ell": self.ell, "allow_k2": self.allow_k2,
            "max_bite_retries": self.max_bite_retries, "rounding": self.rounding,
        }


def bite_size(rate: Fraction, n_j: int) -> int:
    return math.floor(rate * n_j)


def size_schedule(n: int, rate: Fraction, ell: int) -> list[int]:
    sizes = [n]
    for _ in range(ell):
        sizes.append(sizes[-1] - bite_size(rate, sizes[-1]))
    return sizes


def desk_q2(n_left: int, k: int) -> float:
    """Smallest q with ``q * m^(k-1) >= 3 ln(k m)``, capped at 1."""
    if n_left <= 1:
        return 1.0
    return min(1.0, 3 * math.log(k * n_left) / n_left ** (k - 1))


# -- edges -------------------------------------------------------------------

def encode_edge(edge: Sequence[int], n: int) -> int:
    idx = 0
    for m, v in enumerate(edge):
        v = int(v)
        if not 0 <= v < n:
            raise ValueError(f"coordinate {m} = {v} out of range [0, {n})")
        idx += v * n**m
    return idx


def decode_edge(index: int, n: int, k: int) -> tuple[int, ...]:
    if not 0 <= index < n**k:
        raise ValueError(f"edge index {index} out of range [0, {n**k})")
    out = []
    for _ in range(k):
        index, v = divmod(index, n)
        out.append(v)
    return tuple(out)


def encode_edges(edges: np.ndarray, n: int) -> np.ndarray:
    edges = as_edge_array(edges)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValueError(f"coordinate out of range [0, {n})")
    weights = np.array([n**m for m in range(edges.shape[1])], dtype=np.int64)
    return edges @ weights


def decode_edges(indices: Iterable[int], n: int, k: int) -> np.ndarray:
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n**k):
        raise ValueError(f"edge index out of range [0, {n**k})")
    out = np.empty((idx.size, k), dtype=np.int64)
    for m in range(k):
        idx, out[:, m] = np.divmod(idx, n)
    return out


def as_edge_array(edges, k: int | None = None) -> np.ndarray:
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, k or 0), dtype=np.int64)
    if arr.ndim != 2 or (k is not None and arr.shape[1] != k):
        raise ValueError(f"expected an (m, k) edge array, got shape {arr.shape}")
    return arr


# -- matchings ---------------------------------------------------------------

@dataclass(frozen=True)
class MatchingVerdict:
    ok: bool
    reason: str = ""
    part: int | None = None
    vertex: int | None = None

    def __bool__(self):
        return self.ok


def validate_matching(edges, n: int, require_perfect: bool = False) -> MatchingVerdict:
    """Vertex-disjointness (and optionally perfection) of one matching."""
    arr = as_edge_array(edges)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        bad = np.argwhere((arr < 0) | (arr >= n))[0]
        return MatchingVerdict(False, "vertex out of range", int(bad[1]), int(arr[tuple(bad)]))
    for m in range(arr.shape[1] if arr.size else 0):
        counts = np.bincount(arr[:, m], minlength=n)
        if counts.max() > 1:
            v = int(np.argmax(counts > 1))
            return MatchingVerdict(False, "vertex reused", m, v)
    if require_perfect and len(arr) != n:
        return MatchingVerdict(False, f"size {len(arr)} != {n}")
    return MatchingVerdict(True)


@dataclass(frozen=True)
class DisjointnessVerdict:
    ok: bool
    collisions: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...] = field(default=())

    def __bool__(self):
        return self.ok


def pairwise_disjoint(matchings: Sequence) -> DisjointnessVerdict:
    """Edge-disjointness across matchings.

    Each collision is ``(edge, indices of the matchings containing it)``.
    """
    seen: dict[tuple[int, ...], list[int]] = {}
    for i, m in enumerate(matchings):
        for e in as_edge_array(m):
            seen.setdefault(tuple(int(v) for v in e), []).append(i)
    collisions = tuple(
        (e, tuple(idx)) for e, idx in sorted(seen.items()) if len(idx) > 1
    )
    return DisjointnessVerdict(not collisions, collisions)


def uncovered_sets(matching, n: int, k: int) -> list[np.ndarray]:
    """Per-part sorted vertices not covered by ``matching``."""
    arr = as_edge_array(matching, k)
    out = []
    for m in range(k):
        covered = np.zeros(n, dtype=bool)
        covered[arr[:, m]] = True
        out.append(np.flatnonzero(~covered))
    return out


def canonical(matching) -> np.ndarray:
    """Rows sorted lexicographically by (part 0, part 1, ...)."""
    arr = as_edge_array(matching)
    if len(arr) == 0:
        return arr
    order = np.lexsort(arr.T[::-1])
    return arr[order]
