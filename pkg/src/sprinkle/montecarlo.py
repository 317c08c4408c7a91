"""Monte Carlo estimators for the closed forms in ``bounds``.

Each estimator runs independent nibble rounds (round index = sample index)
and keeps only rounds that finished without a bite failure and without
retries, so every kept round follows the plain process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .core import PackingParams
from .nibble import isolated_mask, run_round


@dataclass
class Estimate:
    mean: float
    se: float
    samples: int
    attempted: int

    def within(self, target: float, rel: float) -> bool:
        return abs(self.mean - target) <= rel * abs(target)


def _successful_rounds(params: PackingParams, samples: int, max_attempts: int | None = None):
    if max_attempts is None:
        max_attempts = 20 * samples
    got = 0
    i = 0
    while got < samples and i < max_attempts:
        o = run_round(i, params)
        i += 1
        if o.failed or o.retries:
            continue
        got += 1
        yield o
    if got < samples:
        raise RuntimeError(f"only {got} of {samples} successful rounds in {max_attempts} attempts")


def round_weight_samples(params: PackingParams, samples: int, edge=None) -> tuple[np.ndarray, int]:
    """Per-round ``sum_j q_ij [edge relevant at step j]`` for a fixed edge.

    Returns the samples and the number of rounds attempted.
    """
    edge = tuple(edge) if edge is not None else (0,) * params.k
    out = np.empty(samples)
    attempted = 0
    for s, o in enumerate(_successful_rounds(params, samples)):
        attempted = o.round_index + 1
        ct = o.shard.record.edge_cover_time(edge)
        out[s] = sum(q for j, q in o.shard.record.exposures if j < ct)
    return out, attempted


def estimate_round_weight(params: PackingParams, samples: int, edge=None) -> Estimate:
    x, attempted = round_weight_samples(params, samples, edge)
    return Estimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x))), len(x), attempted)


@dataclass
class UncoveredFrequency:
    freq: np.ndarray  # (k, n): fraction of rounds with the vertex in U_i
    target: float
    se: float
    samples: int

    @property
    def z(self) -> np.ndarray:
        return (self.freq - self.target) / self.se

    def all_within(self, nse: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z) <= nse))


def uncovered_frequency(params: PackingParams, samples: int) -> UncoveredFrequency:
    """Per-vertex frequency of staying uncovered after Phase 1."""
    n, k = params.n, params.k
    counts = np.zeros((k, n), dtype=np.int64)
    n_left = None
    for o in _successful_rounds(params, samples):
        for m in range(k):
            counts[m, o.leftover[m]] += 1
        if n_left is None:
            n_left = o.n_left
        elif params.rounding == "floor" and o.n_left != n_left:
            raise AssertionError("floored schedule produced different residual sizes")
    target = n_left / n
    se = float(np.sqrt(target * (1 - target) / samples))
    return UncoveredFrequency(counts / samples, target, se, samples)


def relevance_frequency(k: int, n: int, samples: int, seed: int = 0) -> Estimate:
    """Frequency with which a uniform k-subset of ``[kn]`` meets every part
    of a uniform equipartition into ``k`` parts of size ``n``.

    Fixing the partition and drawing the subset uniformly gives the same law.
    """
    rng = rngmod.substream(seed, rngmod.TAG_PARTITION)
    hits = np.empty(samples, dtype=bool)
    for s in range(samples):
        perm = rng.permutation(k * n)  # perm[v] // n is the part of v
        e = rng.choice(k * n, size=k, replace=False)
        hits[s] = len(set((perm[e] // n).tolist())) == k
    m = hits.mean()
    return Estimate(float(m), float(np.sqrt(m * (1 - m) / samples)), samples, samples)


def isolated_count_samples(n_j: int, k: int, delta: float, samples: int, seed: int = 0) -> np.ndarray:
    """Isolated edge counts of ``H(n_j x k, delta / n_j^(k-1))``."""
    from .exposure import expose_batch, make_batch

    q = delta / n_j ** (k - 1)
    sets = [np.arange(n_j)] * k
    out = np.empty(samples, dtype=np.int64)
    for s in range(samples):
        colored = expose_batch(make_batch(s, 0, sets, q), rngmod.substream(seed, rngmod.TAG_EXPOSE, s))
        out[s] = int(isolated_mask(colored, n_j).sum())
    return out
