"""From the complete k-uniform model on ``[kn]`` to k-partite instances.

``split_to_partite`` exposes every k-subset of ``[kn]`` once, assigns each
kept edge to one uniformly chosen partition it is rainbow for, and so yields
``t`` edge-disjoint k-partite hosts. ``pack_nonpartite`` packs each host with
the partite pipeline and maps the matchings back to ``[kn]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .core import PackingParams
from .exposure import HostFilter, _skip_positions
from .packing import pack_partite


@dataclass
class PartitionFamily:
    kn: int
    k: int
    labels: np.ndarray  # (t, kn): part of each vertex in each partition
    members: np.ndarray  # (t, k, n): sorted vertices of each part

    @property
    def t(self) -> int:
        return self.labels.shape[0]

    @property
    def n(self) -> int:
        return self.kn // self.k

    def relevant(self, edges: np.ndarray) -> np.ndarray:
        """(count, t) mask: edge meets every part of partition i."""
        lab = self.labels[:, edges]  # (t, count, k)
        lab = np.sort(lab, axis=2)
        return np.all(lab == np.arange(self.k), axis=2).T

    def to_local(self, i: int, edges: np.ndarray) -> np.ndarray:
        """Rainbow edges of partition ``i`` as k-partite edges (column = part)."""
        lab = self.labels[i, edges]
        order = np.argsort(lab, axis=1)
        by_part = np.take_along_axis(edges, order, axis=1)
        local = np.empty_like(by_part)
        for m in range(self.k):
            local[:, m] = np.searchsorted(self.members[i, m], by_part[:, m])
        return local

    def to_global(self, i: int, local: np.ndarray) -> np.ndarray:
        """Inverse of ``to_local``; rows come back as sorted k-subsets."""
        out = np.stack([self.members[i, m][local[:, m]] for m in range(self.k)], axis=1)
        return np.sort(out, axis=1)


def sample_partitions(kn: int, k: int, t: int, rng: np.random.Generator) -> PartitionFamily:
    if k < 1 or kn % k:
        raise ValueError(f"kn = {kn} is not divisible by k = {k}")
    if t < 1:
        raise ValueError("t must be >= 1")
    n = kn // k
    labels = np.empty((t, kn), dtype=np.int64)
    members = np.empty((t, k, n), dtype=np.int64)
    base = np.repeat(np.arange(k), n)
    for i in range(t):
        labels[i] = rng.permutation(base)
        for m in range(k):
            members[i, m] = np.flatnonzero(labels[i] == m)
    return PartitionFamily(kn, k, labels, members)


def colex_unrank(ranks: np.ndarray, kn: int, k: int) -> np.ndarray:
    """k-subsets of ``[kn]`` with the given colex ranks, ascending rows."""
    ranks = np.asarray(ranks, dtype=np.int64).copy()
    out = np.empty((len(ranks), k), dtype=np.int64)
    for i in range(k, 0, -1):
        table = np.array([math.comb(c, i) for c in range(kn)], dtype=np.int64)
        c = np.searchsorted(table, ranks, side="right") - 1
        out[:, i - 1] = c
        ranks -= table[c]
    return out


def colex_rank(edges: np.ndarray) -> np.ndarray:
    edges = np.sort(np.asarray(edges, dtype=np.int64), axis=1)
    r = np.zeros(len(edges), dtype=np.int64)
    for i in range(edges.shape[1]):
        r += np.array([math.comb(int(c), i + 1) for c in edges[:, i]], dtype=np.int64)
    return r


@dataclass
class PartiteSplit:
    family: PartitionFamily
    classes: list[np.ndarray]  # local k-partite edges per partition
    exposed: int
    discarded: int
    relevant_sizes: np.ndarray  # |R_e| per exposed edge

    def class_counts(self) -> list[int]:
        return [len(c) for c in self.classes]


def split_to_partite(kn: int, k: int, t: int, p: float, rng: np.random.Generator,
                     family: PartitionFamily | None = None) -> PartiteSplit:
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    fam = family if family is not None else sample_partitions(kn, k, t, rng)
    total = math.comb(kn, k)
    edges = colex_unrank(_skip_positions(total, p, rng), kn, k)
    rel = fam.relevant(edges) if len(edges) else np.zeros((0, fam.t), dtype=bool)
    sizes = rel.sum(axis=1)
    keep = sizes > 0
    # f(e): uniform element of R_e
    pick = np.floor(rng.random(len(edges)) * np.maximum(sizes, 1)).astype(np.int64)
    cum = np.cumsum(rel, axis=1)
    f = np.argmax(cum > pick[:, None], axis=1)
    classes = [fam.to_local(i, edges[keep & (f == i)]) for i in range(fam.t)]
    return PartiteSplit(fam, classes, len(edges), int((~keep).sum()), sizes)


def split_colors(edges: np.ndarray, r: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Colour each edge uniformly from ``[r]``; stream ``c`` gets colour ``c``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    edges = np.asarray(edges)
    colors = rng.integers(r, size=len(edges))
    return [edges[colors == c] for c in range(r)]


def rainbow_probability(k: int, n: int | None = None) -> float:
    """Chance that a uniform k-subset of ``[kn]`` meets every part of a fixed
    equipartition: ``n^k / C(kn, k)``, tending to ``k!/k^k`` (``n=None``)."""
    if n is None:
        return math.factorial(k) / k**k
    return n**k / math.comb(k * n, k)


def class_density(p: float, k: int, t: int, n: int | None = None) -> float:
    """``P(e in class i | e rainbow for partition i)`` = ``p E[1 / (1 + Bin(t-1, r))]``
    with ``r`` the rainbow probability."""
    r = rainbow_probability(k, n)
    mean_inv = sum(math.comb(t - 1, j) * r**j * (1 - r) ** (t - 1 - j) / (j + 1) for j in range(t))
    return p * mean_inv


@dataclass
class NonpartiteResult:
    split: PartiteSplit
    results: list  # PackingResult per class
    matchings: list[tuple[int, int, np.ndarray]]  # (class, round, sorted k-subsets)
    perfect: list[bool]
    disjoint: bool
    collisions: int

    def report(self) -> dict:
        return {
            "t": self.split.family.t,
            "exposed": self.split.exposed,
            "discarded": self.split.discarded,
            "class_edge_counts": self.split.class_counts(),
            "classes": [
                {"class": i, "verdicts": r.audits["verdicts"],
                 "perfect_matchings": r.audits["perfect_matchings"],
                 "bite_failures": r.audits["bite_failures"]}
                for i, r in enumerate(self.results)
            ],
            "matchings": len(self.matchings),
            "all_perfect": all(self.perfect),
            "disjoint": self.disjoint,
            "collisions": self.collisions,
        }


def is_perfect_kn(edges: np.ndarray, kn: int) -> bool:
    if len(edges) * edges.shape[1] != kn:
        return False
    return bool(np.array_equal(np.sort(edges.reshape(-1)), np.arange(kn)))


def pack_nonpartite(kn: int, k: int, p: float, params: PackingParams, t: int = 1,
                    seed: int | None = None) -> NonpartiteResult:
    """Split, pack every class inside its host, and translate back to ``[kn]``.

    ``params`` supplies everything but ``n``/``k``/``seed``; class ``i`` runs
    with seed ``mix_seed(seed, TAG_CLASS, i)``.
    """
    if kn % k:
        raise ValueError(f"kn = {kn} is not divisible by k = {k}")
    seed = params.seed if seed is None else seed
    n = kn // k
    split = split_to_partite(kn, k, t, p, rngmod.substream(seed, rngmod.TAG_SPLIT))
    density = class_density(p, k, t, n)
    results, matchings, perfect = [], [], []
    for i, local in enumerate(split.classes):
        cp = replace(params, n=n, k=k, seed=rngmod.mix_seed(seed, rngmod.TAG_CLASS, i))
        host_idx = np.zeros(len(local), dtype=np.int64)
        for m in range(k - 1, -1, -1):
            host_idx = host_idx * n + local[:, m]
        host = HostFilter(n, np.sort(host_idx), density)
        res = pack_partite(cp, host=host)
        results.append(res)
        for r, mt in sorted(res.matchings.items()):
            g = split.family.to_global(i, mt)
            matchings.append((i, r, g))
            perfect.append(is_perfect_kn(g, kn))
    seen: set[tuple] = set()
    collisions = 0
    for _, _, g in matchings:
        for e in map(tuple, g.tolist()):
            if e in seen:
                collisions += 1
            seen.add(e)
    return NonpartiteResult(split, results, matchings, perfect, collisions == 0, collisions)
