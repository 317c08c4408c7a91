"""Phase 1: nibble rounds.

Round ``i`` grows a matching by ``ell`` bites. At step ``j`` every edge of the
product of the current uncovered sets is coloured with probability
``delta / n_j^(k-1)``; the bite is a uniformly random set of exactly
``floor((delta - beta) n_j)`` isolated coloured edges. Rounds never look at
each other.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .core import PackingParams, as_edge_array, bite_size
from .exposure import (
    NEVER,
    ExposureLedger,
    LedgerShard,
    HostFilter,
    RoundRecord,
    expose,
    make_batch,
)


class BiteFailure(Exception):
    """Fewer isolated coloured edges than the bite target."""

    def __init__(self, round_index: int, step: int, isolated: int, target: int):
        super().__init__(
            f"round {round_index} step {step}: {isolated} isolated edges < bite {target}"
        )
        self.round_index = round_index
        self.step = step
        self.isolated = isolated
        self.target = target


@dataclass
class StepDiag:
    round: int
    step: int
    n_j: int
    q: float
    colored: int
    isolated: int
    bite: int
    failure: bool
    attempt: int = 0

    def row(self) -> list:
        return [self.round, self.step, self.n_j, repr(self.q), self.colored,
                self.isolated, self.bite, int(self.failure)]


CSV_HEADER = ["round", "step", "n_j", "q_ij", "colored", "isolated", "bite", "failure"]


@dataclass
class RoundState:
    round_index: int
    n: int
    k: int
    step: int = 0
    cover_times: np.ndarray = None
    edges: list = field(default_factory=list)
    exposures: list = field(default_factory=list)
    sizes: list = field(default_factory=list)

    def __post_init__(self):
        if self.cover_times is None:
            self.cover_times = np.full((self.k, self.n), NEVER, dtype=np.int64)
        if not self.sizes:
            self.sizes = [self.n]

    @property
    def n_j(self) -> int:
        return self.sizes[-1]

    def uncovered(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.cover_times[m] == NEVER) for m in range(self.k)]

    def matching(self) -> np.ndarray:
        if not self.edges:
            return np.empty((0, self.k), dtype=np.int64)
        return np.concatenate(self.edges)


@dataclass
class NibbleOutcome:
    round_index: int
    matching: np.ndarray
    leftover: list[np.ndarray] | None
    sizes: list[int]
    steps: list[StepDiag]
    failed: bool
    failure_step: int | None
    retries: int
    shard: LedgerShard

    @property
    def n_left(self) -> int:
        return self.sizes[-1]


def isolated_mask(colored: np.ndarray, n: int) -> np.ndarray:
    """Rows of ``colored`` whose every vertex has coloured degree exactly 1."""
    colored = as_edge_array(colored)
    if len(colored) == 0:
        return np.zeros(0, dtype=bool)
    mask = np.ones(len(colored), dtype=bool)
    for m in range(colored.shape[1]):
        deg = np.bincount(colored[:, m], minlength=n)
        mask &= deg[colored[:, m]] == 1
    return mask


def uniform_bite_select(isolated: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform ``b``-subset of the isolated edges.

    Depends on the edges only through their count, so it commutes with any
    per-part relabelling of the vertices.
    """
    isolated = as_edge_array(isolated)
    if b > len(isolated):
        raise BiteFailure(-1, -1, len(isolated), b)
    if b == 0:
        return isolated[:0]
    idx = np.sort(rng.choice(len(isolated), size=b, replace=False))
    return isolated[idx]


def step_bite(params: PackingParams, n_j: int, seed: int, i: int, j: int) -> int:
    """Bite target: floored, or rounded up with probability equal to the
    fractional part (``E[b] = (delta - beta) n_j`` exactly)."""
    b = bite_size(params.bite_rate, n_j)
    if params.rounding == "stochastic":
        frac = params.bite_rate * n_j - b
        if frac and rngmod.substream(seed, rngmod.TAG_ROUNDING, i, j).random() < frac:
            b += 1
    return b


def nibble_step(
    state: RoundState,
    params: PackingParams,
    seed: int,
    attempt: int = 0,
    batch_log: list | None = None,
    host: HostFilter | None = None,
) -> tuple[np.ndarray, StepDiag]:
    """Run step ``state.step`` once; mutates ``state`` on success.

    Raises ``BiteFailure`` (state untouched apart from the recorded exposure)
    when the isolated edges cannot supply the bite.
    """
    i, j, n, k = state.round_index, state.step, state.n, state.k
    n_j = state.n_j
    b = step_bite(params, n_j, seed, i, j)
    if b == 0:
        diag = StepDiag(i, j, n_j, 0.0, 0, 0, 0, False, attempt)
        state.step += 1
        state.sizes.append(n_j)
        return np.empty((0, k), dtype=np.int64), diag

    q = params.step_probability(n_j)
    sets = state.uncovered()
    batch = make_batch(i, j, sets, q, attempt)
    colored = expose(batch, rngmod.substream(seed, rngmod.TAG_EXPOSE, i, j, attempt), host)
    state.exposures.append((j, q))
    if batch_log is not None:
        batch_log.append(batch)

    iso = colored[isolated_mask(colored, n)]
    if len(iso) < b:
        raise BiteFailure(i, j, len(iso), b)
    bite = uniform_bite_select(iso, b, rngmod.substream(seed, rngmod.TAG_BITE, i, j, attempt))

    for m in range(k):
        state.cover_times[m, bite[:, m]] = j + 1
    state.edges.append(bite)
    state.step += 1
    state.sizes.append(n_j - b)
    assert state.n_j == n - sum(len(e) for e in state.edges)
    diag = StepDiag(i, j, n_j, q, len(colored), len(iso), b, False, attempt)
    return bite, diag


def run_round(i: int, params: PackingParams, seed: int | None = None,
              record_batches: bool = False, host: HostFilter | None = None) -> NibbleOutcome:
    """All ``ell`` steps of round ``i``; an unrecovered bite failure aborts."""
    seed = params.seed if seed is None else seed
    state = RoundState(i, params.n, params.k)
    log = [] if record_batches else None
    diags: list[StepDiag] = []
    retries = 0
    failed_at = None
    for j in range(params.ell_):
        attempt = 0
        while True:
            try:
                _, diag = nibble_step(state, params, seed, attempt, log, host)
                diags.append(diag)
                break
            except BiteFailure as exc:
                diags.append(StepDiag(i, j, state.n_j, params.step_probability(state.n_j),
                                      -1, exc.isolated, exc.target, True, attempt))
                if attempt < params.max_bite_retries:
                    attempt += 1
                    retries += 1
                    continue
                failed_at = j
                break
        if failed_at is not None:
            break
    record = RoundRecord(i, state.cover_times, list(state.exposures))
    shard = LedgerShard(i, record=record, batch_log=log or [])
    failed = failed_at is not None
    return NibbleOutcome(
        round_index=i,
        matching=state.matching(),
        leftover=None if failed else state.uncovered(),
        sizes=list(state.sizes),
        steps=diags,
        failed=failed,
        failure_step=failed_at,
        retries=retries,
        shard=shard,
    )


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("SPRINKLE_THREADS", "1") or 1)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


@dataclass
class Phase1Result:
    outcomes: list[NibbleOutcome]
    ledger: ExposureLedger

    @property
    def failures(self) -> int:
        return sum(o.failed for o in self.outcomes)


def phase1(params: PackingParams, workers: int | None = None,
           dense: bool | None = None, host: HostFilter | None = None) -> Phase1Result:
    """``N`` independent rounds; the ledger is merged in round order."""
    ledger = ExposureLedger(params.n, params.k, dense=dense)
    rounds = range(params.n_rounds)

    def one(i):
        return run_round(i, params, record_batches=ledger.dense_enabled, host=host)

    w = worker_count(workers)
    if w > 1:
        with ThreadPoolExecutor(max_workers=w) as pool:
            outcomes = list(pool.map(one, rounds))
    else:
        outcomes = [one(i) for i in rounds]
    for o in outcomes:
        ledger.merge(o.shard)
    return Phase1Result(outcomes, ledger)
