"""Online-sprinkling engine: Bernoulli exposure of product edge sets and the
per-edge weight ledger.

The weight of an edge is ``1 - prod(1 - p_b)`` over every batch ``b`` whose
edge set contains it. Batches are always Cartesian products ``S_0 x ... x
S_{k-1}``. Two ledger representations are kept:

* compressed: for each nibble round the cover time of every vertex plus the
  per-step probabilities (an edge sits in step ``j``'s batch iff ``j`` is
  smaller than the cover time of each of its vertices), and explicit entries
  for any other block (Phase 2 leftovers);
* dense: a log of explicit batches replayed into an ``n^k`` survival array.

Both are evaluated in the same canonical batch order ``(round, step)`` so the
floating-point products agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import as_edge_array

NEVER = np.iinfo(np.int64).max  # cover time of a vertex never matched
PHASE2_STEP = 1 << 30  # sorts after every nibble step of the same round
DENSE_AUTO_LIMIT = 1 << 24


@dataclass(frozen=True)
class ExposureBatch:
    round_index: int
    step: int
    sets: tuple[np.ndarray, ...]
    prob: float
    attempt: int = 0

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.round_index, self.step, self.attempt)

    @property
    def size(self) -> int:
        return math.prod(len(s) for s in self.sets)

    def check(self, n: int, k: int) -> None:
        if len(self.sets) != k:
            raise ValueError(f"batch {self.key}: expected {k} vertex sets, got {len(self.sets)}")
        if not 0 <= self.prob <= 1:
            raise ValueError(f"batch {self.key}: probability {self.prob} outside [0, 1]")
        for m, s in enumerate(self.sets):
            if len(s) and (s.min() < 0 or s.max() >= n):
                raise ValueError(f"batch {self.key}: part {m} claims vertices outside [0, {n})")
            if len(s) > 1 and np.any(np.diff(s) <= 0):
                raise ValueError(f"batch {self.key}: part {m} vertex set not sorted/unique")


def make_batch(round_index: int, step: int, sets: Sequence, prob: float, attempt: int = 0) -> ExposureBatch:
    return ExposureBatch(
        round_index, step, tuple(np.unique(np.asarray(s, dtype=np.int64)) for s in sets),
        float(prob), attempt,
    )


def _skip_positions(total: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Increasing positions in ``[0, total)``, each present w.p. ``p``.

    Geometric jumps: cost is proportional to the number of hits.
    """
    if total <= 0 or p <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(total, dtype=np.int64)
    out = []
    pos = -1
    chunk = int(total * p * 1.1) + 16
    while True:
        gaps = rng.geometric(p, size=chunk)
        cs = pos + np.cumsum(gaps, dtype=np.int64)
        hit = cs[cs < total]
        out.append(hit)
        if len(hit) < chunk:
            break
        pos = int(cs[-1])
    return np.concatenate(out)


def expose_batch(batch: ExposureBatch, rng: np.random.Generator) -> np.ndarray:
    """Sample the batch's product set; edges in canonical (part-0-fastest) order."""
    sizes = [len(s) for s in batch.sets]
    pos = _skip_positions(math.prod(sizes), batch.prob, rng)
    edges = np.empty((len(pos), len(sizes)), dtype=np.int64)
    for m, s in enumerate(batch.sets):
        pos, local = np.divmod(pos, sizes[m])
        edges[:, m] = s[local]
    return edges


@dataclass(frozen=True)
class HostFilter:
    """Draw exposures from inside a fixed host hypergraph of edge density ``density``.

    A batch at probability ``q`` samples the product at ``min(1, q / density)``
    and keeps the host edges, so a first exposure still has marginal ``q``
    while every produced edge lies in the host.
    """

    n: int
    host: np.ndarray  # sorted canonical edge indices
    density: float

    def sample(self, batch: "ExposureBatch", rng: np.random.Generator) -> np.ndarray:
        scaled = ExposureBatch(batch.round_index, batch.step, batch.sets,
                               min(1.0, batch.prob / self.density), batch.attempt)
        edges = expose_batch(scaled, rng)
        if not len(edges):
            return edges
        idx = np.zeros(len(edges), dtype=np.int64)
        for m in range(edges.shape[1] - 1, -1, -1):
            idx = idx * self.n + edges[:, m]
        pos = np.searchsorted(self.host, idx)
        pos[pos == len(self.host)] = 0
        keep = self.host[pos] == idx if len(self.host) else np.zeros(len(idx), dtype=bool)
        return edges[keep]


def expose(batch: "ExposureBatch", rng: np.random.Generator, host: HostFilter | None = None) -> np.ndarray:
    return expose_batch(batch, rng) if host is None else host.sample(batch, rng)


@dataclass
class RoundRecord:
    """Compressed exposure history of one nibble round."""

    round_index: int
    cover_times: np.ndarray  # (k, n) int64: first step the vertex is covered for; NEVER if never
    exposures: list[tuple[int, float]]  # (step, prob) in execution order

    def edge_cover_time(self, edge: Sequence[int]) -> int:
        return int(min(self.cover_times[m, v] for m, v in enumerate(edge)))


@dataclass
class LedgerShard:
    """What one round contributes; merged into a ledger by round index."""

    round_index: int
    record: RoundRecord | None = None
    blocks: list[ExposureBatch] = field(default_factory=list)
    batch_log: list[ExposureBatch] = field(default_factory=list)


class ExposureLedger:
    """Per-edge accumulated exposure probability."""

    def __init__(self, n: int, k: int, dense: bool | None = None):
        self.n = n
        self.k = k
        if dense is None:
            dense = n**k <= DENSE_AUTO_LIMIT
        self.dense_enabled = bool(dense)
        self.rounds: dict[int, RoundRecord] = {}
        self.blocks: dict[tuple[int, int, int], ExposureBatch] = {}
        self._log: dict[tuple[int, int, int], ExposureBatch] = {}
        self._dense: np.ndarray | None = None

    # -- accumulation --------------------------------------------------------
    def accumulate(self, batch: ExposureBatch) -> "ExposureLedger":
        """Record an explicit product batch (not part of a nibble round record)."""
        batch.check(self.n, self.k)
        if batch.key in self.blocks or batch.key in self._log:
            raise ValueError(f"batch key {batch.key} recorded twice")
        if batch.round_index in self.rounds and batch.step < PHASE2_STEP:
            raise ValueError(f"batch key {batch.key} collides with a recorded round")
        self.blocks[batch.key] = batch
        if self.dense_enabled:
            self._log[batch.key] = batch
        self._dense = None
        return self

    def merge(self, shard: LedgerShard) -> "ExposureLedger":
        if shard.record is not None:
            i = shard.record.round_index
            if i in self.rounds:
                raise ValueError(f"round {i} merged twice")
            if shard.record.cover_times.shape != (self.k, self.n):
                raise ValueError(f"round {i}: cover-time table has wrong shape")
            self.rounds[i] = shard.record
        for b in shard.blocks:
            self.accumulate(b)
        if self.dense_enabled:
            for b in shard.batch_log:
                b.check(self.n, self.k)
                self._log[b.key] = b
        self._dense = None
        return self

    # -- evaluation ----------------------------------------------------------
    def _entries(self, select: str = "all"):
        """Canonically ordered (key, kind, payload) triples.

        ``select``: ``all``, ``rounds`` (nibble exposures only) or ``blocks``.
        """
        if select not in ("all", "rounds", "blocks"):
            raise ValueError(f"unknown selection {select!r}")
        items = []
        if select != "blocks":
            for i, rec in self.rounds.items():
                items.append(((i, -1, 0), "round", rec))
        if select != "rounds":
            for key, b in self.blocks.items():
                items.append((key, "block", b))
        items.sort(key=lambda t: t[0])
        return items

    def survival(self, edge: Sequence[int], select: str = "all") -> float:
        edge = [int(v) for v in edge]
        s = 1.0
        for _, kind, obj in self._entries(select):
            if kind == "round":
                ct = obj.edge_cover_time(edge)
                for j, q in obj.exposures:
                    if j < ct and q > 0:
                        s *= 1.0 - q
            elif all(np.any(obj.sets[m] == v) for m, v in enumerate(edge)):
                s *= 1.0 - obj.prob
        return s

    def weight(self, edge: Sequence[int]) -> float:
        return 1.0 - self.survival(edge)

    def iter_chunks(self, select: str = "all", with_sums: bool = False,
                    max_cells: int = 1 << 20) -> Iterator:
        """Yield ``(v0s, survival, prob_sum)`` for consecutive part-0 vertices.

        ``survival`` has shape ``(len(v0s), n^(k-1))``, the columns in canonical
        order of the remaining parts. ``prob_sum`` is ``None`` unless
        ``with_sums``. Factors are applied one exposure at a time in canonical
        batch order, exactly as the dense replay does.
        """
        n, k = self.n, self.k
        entries = self._entries(select)
        width = n ** (k - 1)
        rest_ct = {}
        rest_in = {}
        for key, kind, obj in entries:
            if kind == "round":
                rest_ct[key] = _grid_min([obj.cover_times[m] for m in range(1, k)])
            else:
                rest_in[key] = _grid_all([np.isin(np.arange(n), obj.sets[m]) for m in range(1, k)])
        rows = max(1, min(n, max_cells // width))
        for lo in range(0, n, rows):
            v0s = np.arange(lo, min(n, lo + rows))
            s = np.ones((len(v0s), width))
            tot = np.zeros((len(v0s), width)) if with_sums else None
            for key, kind, obj in entries:
                if kind == "round":
                    ct = np.minimum(rest_ct[key][None, :], obj.cover_times[0, v0s][:, None])
                    _apply_round(s, tot, ct, obj.exposures)
                else:
                    mask = np.isin(v0s, obj.sets[0])[:, None] & rest_in[key][None, :]
                    s *= np.where(mask, 1.0 - obj.prob, 1.0)
                    if with_sums:
                        tot += np.where(mask, obj.prob, 0.0)
            yield v0s, s, tot

    def compressed_survival(self, select: str = "all") -> np.ndarray:
        """Survival of every edge, indexed by canonical edge index."""
        n, k = self.n, self.k
        out = np.empty(n**k)
        out_v = out.reshape((n ** (k - 1), n))  # [rest, v0] in C order
        for v0s, s, _ in self.iter_chunks(select):
            out_v[:, v0s] = s.T
        return out

    def dense_survival(self) -> np.ndarray:
        """Replay the batch log into an explicit survival array (canonical index)."""
        if not self.dense_enabled:
            raise RuntimeError("dense ledger disabled for this instance")
        if self._dense is None:
            n, k = self.n, self.k
            arr = np.ones((n,) * k)  # arr[v0, v1, ...]
            for key in sorted(self._log):
                b = self._log[key]
                if b.prob > 0 and b.size:
                    arr[np.ix_(*b.sets)] *= 1.0 - b.prob
            self._dense = arr.reshape(-1, order="F")
        return self._dense

    def exact_match(self) -> bool:
        """Bitwise agreement of compressed and dense survival arrays."""
        return bool(np.array_equal(self.compressed_survival(), self.dense_survival()))


def _apply_round(s: np.ndarray, tot: np.ndarray | None, ct: np.ndarray, exposures) -> None:
    """Multiply in one round's exposures; an edge with cover time ``ct`` is
    relevant at every step ``j < ct``.

    Cells are visited in decreasing ``ct`` so that each step touches a prefix.
    Every cell sees the same multiplications in the same order as a dense
    replay would apply, so results agree bitwise.
    """
    live = [(j, q) for j, q in exposures if q > 0]
    if not live:
        return
    top = max(j for j, _ in live) + 1
    key = np.minimum(ct, top).astype(np.int16).reshape(-1)
    order = np.argsort(-key, kind="stable")
    # cells with ct > j form the first `count[j + 1]` entries of `order`
    hist = np.bincount(key, minlength=top + 1)
    count = np.cumsum(hist[::-1])[::-1]
    flat = s.reshape(-1)
    sub = flat[order]
    tsub = tot.reshape(-1)[order] if tot is not None else None
    for j, q in live:
        c = int(count[j + 1])
        sub[:c] *= 1.0 - q
        if tsub is not None:
            tsub[:c] += q
    flat[order] = sub
    if tot is not None:
        tot.reshape(-1)[order] = tsub


def _grid_min(arrays: list[np.ndarray]) -> np.ndarray:
    """Flattened min over the product grid, first array fastest."""
    if not arrays:
        return np.full(1, NEVER, dtype=np.int64)
    g = arrays[0]
    for a in arrays[1:]:
        g = np.minimum.outer(a, g).reshape(-1)
    return g


def _grid_all(arrays: list[np.ndarray]) -> np.ndarray:
    if not arrays:
        return np.ones(1, dtype=bool)
    g = arrays[0]
    for a in arrays[1:]:
        g = np.logical_and.outer(a, g).reshape(-1)
    return g


def ledger_accumulate(ledger: ExposureLedger, batch: ExposureBatch) -> ExposureLedger:
    return ledger.accumulate(batch)


def ledger_weight(ledger: ExposureLedger, edge: Sequence[int]) -> float:
    return ledger.weight(edge)


@dataclass
class CouplingAudit:
    passed: bool
    p: float
    max_weight: float
    argmax_edge: tuple[int, ...] | None
    phase1_max_weight: float
    phase1_ok: bool
    total_ok: bool
    sum_bound_ok: bool
    gamma_bound_ok: bool
    sum_bound_violations: int
    histogram: list[int]
    overflow: int

    def to_dict(self) -> dict:
        return {
            "passed": self.passed, "p": self.p, "max_weight": self.max_weight,
            "argmax_edge": list(self.argmax_edge) if self.argmax_edge is not None else None,
            "phase1_max_weight": self.phase1_max_weight, "phase1_ok": self.phase1_ok,
            "total_ok": self.total_ok, "sum_bound_ok": self.sum_bound_ok,
            "gamma_bound_ok": self.gamma_bound_ok,
            "sum_bound_violations": self.sum_bound_violations,
            "histogram": {"bins": 50, "range": [0.0, self.p], "counts": self.histogram,
                          "overflow": self.overflow},
        }


# Float slack for "1 - prod(1 - q) <= sum q": the relation is exact in reals,
# the computed product can exceed it by a few ulps.
_SUM_RTOL = 1e-12


def audit_coupling(ledger: ExposureLedger, p: float, epsilon: float, gamma: float) -> CouplingAudit:
    """Max-weight audit over every edge of ``V_0 x ... x V_{k-1}``."""
    n, k = ledger.n, ledger.k
    best_s, best_e = 1.0, None
    hist = np.zeros(50, dtype=np.int64)
    overflow = 0
    sum_viol = 0
    gamma_ok = True
    for v0s, s, tot in ledger.iter_chunks(with_sums=True):
        w = 1.0 - s
        r0, i = np.unravel_index(int(np.argmin(s)), s.shape)
        if s[r0, i] < best_s:
            best_s = float(s[r0, i])
            rest = []
            r = int(i)
            for _ in range(k - 1):
                r, v = divmod(r, n)
                rest.append(v)
            best_e = (int(v0s[r0]), *rest)
        sum_viol += int(np.count_nonzero(w > tot * (1 + _SUM_RTOL)))
        if np.any(w > (1 + gamma) * tot * (1 + _SUM_RTOL)):
            gamma_ok = False
        hist += np.histogram(w[w <= p], bins=50, range=(0.0, p))[0]
        overflow += int(np.count_nonzero(w > p))
    p1 = 1.0 - min((float(s.min()) for _, s, _ in ledger.iter_chunks("rounds")), default=1.0)
    max_w = 1.0 - best_s
    phase1_ok = p1 <= (1 - epsilon / 2) * p
    total_ok = max_w <= p
    return CouplingAudit(
        passed=phase1_ok and total_ok,
        p=p,
        max_weight=max_w,
        argmax_edge=best_e if max_w > 0 else None,
        phase1_max_weight=p1,
        phase1_ok=phase1_ok,
        total_ok=total_ok,
        sum_bound_ok=sum_viol == 0,
        gamma_bound_ok=gamma_ok,
        sum_bound_violations=sum_viol,
        histogram=hist.tolist(),
        overflow=overflow,
    )


def block_edges(sets: Sequence[np.ndarray]) -> np.ndarray:
    """All edges of a product block, canonical order."""
    grids = np.meshgrid(*sets, indexing="ij")
    return as_edge_array(np.stack([g.reshape(-1, order="F") for g in grids], axis=1))
