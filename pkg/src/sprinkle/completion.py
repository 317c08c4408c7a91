"""Phase 2: complete each round's matching inside its leftover block.

The leftover block of a round is exposed at ``q2`` and a perfect matching of
the exposed k-partite hypergraph is searched for. No polynomial algorithm
exists in general; the search is a min-degree branching DFS with random
restarts and a node budget, falling back to plain exhaustive backtracking when
the block is small enough to make that cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .core import PackingParams, as_edge_array
from .exposure import PHASE2_STEP, HostFilter, LedgerShard, expose, make_batch
from .nibble import NibbleOutcome

ORACLE_LIMIT = 10**6
FOUND, ABSENT, BUDGET = "found", "absent", "budget"


@dataclass
class PMSearch:
    status: str  # found | absent | budget
    matching: np.ndarray | None
    restarts: int
    nodes: int
    exact: bool  # absence proven (complete search finished)


class _Budget(Exception):
    pass


def _dfs(edges: np.ndarray, m: int, rng: np.random.Generator | None, budget: int | None):
    """Min-degree branching. Returns (matching rows or None, nodes expanded).

    Raises ``_Budget`` once more than ``budget`` nodes have been expanded.
    A vertex of degree one forces its edge; degree zero prunes.
    """
    c, k = edges.shape
    nodes = 0
    chosen: list[int] = []
    # inc[m][v] -> edge ids touching vertex v of part m
    inc = [[np.flatnonzero(edges[:, p] == v) for v in range(m)] for p in range(k)]

    def rec(alive: np.ndarray, covered: np.ndarray) -> bool:
        nonlocal nodes
        nodes += 1
        if budget is not None and nodes > budget:
            raise _Budget
        if covered[0].all():
            return True
        best = None
        best_deg = None
        for p in range(k):
            free = np.flatnonzero(~covered[p])
            deg = np.bincount(edges[alive, p], minlength=m)[free]
            lo = int(deg.min())
            if lo == 0:
                return False
            if best_deg is None or lo < best_deg:
                cands = free[deg == lo]
                v = int(cands[rng.integers(len(cands))]) if rng is not None else int(cands[0])
                best, best_deg = (p, v), lo
        p, v = best
        options = inc[p][v][alive[inc[p][v]]]
        if rng is not None:
            options = rng.permutation(options)
        for e in options:
            kill = np.zeros(c, dtype=bool)
            for pp in range(k):
                kill[inc[pp][edges[e, pp]]] = True
            cov = covered.copy()
            cov[np.arange(k), edges[e]] = True
            chosen.append(int(e))
            if rec(alive & ~kill, cov):
                return True
            chosen.pop()
        return False

    ok = rec(np.ones(c, dtype=bool), np.zeros((k, m), dtype=bool))
    return (edges[chosen] if ok else None), nodes


def pm_oracle_exhaustive(m: int, edges, k: int | None = None) -> tuple[bool, np.ndarray | None]:
    """Exact existence by backtracking over part-0 vertices in order.

    Vertex ``v`` of part 0 is matched by each unused edge through it in turn.
    Deliberately naive: it shares nothing with ``find_perfect_matching``.
    """
    edges = as_edge_array(edges, k)
    k = edges.shape[1] if edges.size else (k or 0)
    if k and m**k > ORACLE_LIMIT:
        raise ValueError(f"oracle guard: block {m}^{k} exceeds {ORACLE_LIMIT}")
    if m == 0:
        return True, np.empty((0, k), dtype=np.int64)
    by_first = [[tuple(int(x) for x in e) for e in edges if e[0] == v] for v in range(m)]
    used = [set() for _ in range(k)]
    picked: list[tuple] = []

    def go(v: int) -> bool:
        if v == m:
            return True
        for e in by_first[v]:
            if any(e[p] in used[p] for p in range(1, k)):
                continue
            for p in range(1, k):
                used[p].add(e[p])
            picked.append(e)
            if go(v + 1):
                return True
            picked.pop()
            for p in range(1, k):
                used[p].discard(e[p])
        return False

    if go(0):
        return True, np.array(picked, dtype=np.int64).reshape(m, k)
    return False, None


def find_perfect_matching(
    m: int,
    edges,
    k: int | None = None,
    rng: np.random.Generator | None = None,
    restarts: int = 50,
    node_budget: int | None = None,
) -> PMSearch:
    """Perfect matching of the block ``[m]^k`` using the given edges.

    ``absent`` is only reported when some search ran to completion, so it is
    a proof of nonexistence; otherwise the answer is ``budget``.
    """
    edges = as_edge_array(edges, k)
    if edges.size:
        edges = np.unique(edges, axis=0)
    k = edges.shape[1] if edges.size else k
    if m == 0:
        return PMSearch(FOUND, np.empty((0, k or 0), dtype=np.int64), 0, 0, True)
    if len(edges) < m:
        return PMSearch(ABSENT, None, 0, 0, True)
    if rng is None:
        rng = np.random.default_rng(0)
    if node_budget is None:
        node_budget = 50 * m + 200
    total = 0
    for r in range(restarts):
        try:
            found, nodes = _dfs(edges, m, rng, node_budget)
        except _Budget:
            total += node_budget
            continue
        total += nodes
        if found is not None:
            return PMSearch(FOUND, found, r, total, True)
        return PMSearch(ABSENT, None, r, total, True)
    if m**k <= ORACLE_LIMIT:
        exists, witness = pm_oracle_exhaustive(m, edges, k)
        return PMSearch(FOUND if exists else ABSENT, witness, restarts, total, True)
    return PMSearch(BUDGET, None, restarts, total, False)


@dataclass
class Completion:
    round_index: int
    n_left: int
    exposed: int
    search: PMSearch
    matching: np.ndarray | None  # Q_i in global coordinates
    shard: LedgerShard

    @property
    def success(self) -> bool:
        return self.search.status == FOUND

    def row(self) -> list:
        return [self.round_index, self.n_left, self.exposed, self.search.restarts, int(self.success)]


COMPLETION_CSV_HEADER = ["round", "n_left", "exposed", "solver_restarts", "success"]


def phase2_complete(outcome: NibbleOutcome, params: PackingParams, seed: int | None = None,
                    q2: float | None = None, host: HostFilter | None = None) -> Completion:
    """Expose the leftover block at ``q2`` and search for a perfect matching in it."""
    if outcome.leftover is None:
        raise ValueError(f"round {outcome.round_index} has no leftover block (failed round)")
    seed = params.seed if seed is None else seed
    q2 = params.q2_ if q2 is None else q2
    if not 0 < q2 <= 1:
        raise ValueError("q2 must lie in (0, 1]")
    i = outcome.round_index
    sets = outcome.leftover
    m = len(sets[0])
    batch = make_batch(i, PHASE2_STEP, sets, q2)
    exposed = expose(batch, rngmod.substream(seed, rngmod.TAG_PHASE2, i), host)
    shard = LedgerShard(i, blocks=[batch])
    local = np.empty_like(exposed)
    for p in range(params.k):
        local[:, p] = np.searchsorted(sets[p], exposed[:, p])
    search = find_perfect_matching(
        m, local, params.k, rng=rngmod.substream(seed, rngmod.TAG_SOLVER, i)
    )
    q_global = None
    if search.matching is not None:
        q_global = np.stack([sets[p][search.matching[:, p]] for p in range(params.k)], axis=1)
    return Completion(i, m, len(exposed), search, q_global, shard)
