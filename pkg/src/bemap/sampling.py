"""Balance-aware neighbor sampling and per-epoch fair neighborhoods.

Weighted sampling without replacement is successive sampling: draw one
neighbor with probability proportional to its weight, remove it,
renormalize, repeat. The epoch-level sampler realizes the same
distribution in one vectorized pass with exponential race keys
(``Exp(1) / w``; the k smallest keys are the first k successive draws).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .graph import Graph, khop_group_counts

MODES = ("bemap", "uniform", "degree", "none")
NORM_MODES = ("row", "symmetric")
MIN_NEIGHBORHOOD = 4


def pairwise_imbalance(counts: np.ndarray) -> np.ndarray:
    """Root of the mean squared difference over unordered group pairs.

    ``counts`` has shape ``(n, S)``. With two groups this is ``|c0 - c1|``.
    """
    c = np.asarray(counts, dtype=np.float64)
    S = c.shape[1]
    sq = np.zeros(c.shape[0])
    for k, j in combinations(range(S), 2):
        sq += (c[:, k] - c[:, j]) ** 2
    return np.sqrt(sq * 2.0 / (S * (S - 1)))


def balance_scores(counts: np.ndarray, delta: float) -> np.ndarray:
    c = np.asarray(counts)
    if c.shape[1] == 2:
        imb = np.abs(c[:, 0] - c[:, 1]).astype(np.float64)
    else:
        imb = pairwise_imbalance(c)
    return 1.0 / (imb + delta)


def row_normalize(g: Graph, edge_weights: np.ndarray) -> np.ndarray:
    """Normalize per-edge weights so each node's outgoing weights sum to 1."""
    totals = np.bincount(g.edge_rows(), weights=edge_weights, minlength=g.n)
    return edge_weights / totals[g.edge_rows()]


@dataclass(frozen=True, eq=False)
class BalanceTable:
    """Per-node balance scores and per-edge neighbor sampling probabilities.

    ``prob`` is aligned with ``g.indices``: ``prob[e]`` for the CSR entry
    ``e = (i, j)`` is P(j | i).
    """

    balance: np.ndarray
    prob: np.ndarray
    hops: int
    delta: float

    def probs_of(self, g: Graph, i: int) -> np.ndarray:
        return self.prob[g.indptr[i]:g.indptr[i + 1]]


def compute_balance_table(g: Graph, hops: int = 2, delta: float = 1.0) -> BalanceTable:
    if not delta > 0:
        raise ValidationError("delta must be positive")
    if hops < 1:
        raise ValidationError("hops must be >= 1")
    balance = balance_scores(khop_group_counts(g, hops), delta)
    prob = row_normalize(g, balance[g.indices])
    for a in (balance, prob):
        a.setflags(write=False)
    return BalanceTable(balance, prob, hops, float(delta))


def single_group_size(degree, beta):
    """Neighbors kept when a self-augmented neighborhood has only one group."""
    d = np.asarray(degree)
    return np.minimum(d, np.maximum(MIN_NEIGHBORHOOD, np.ceil(beta * d - 1e-12).astype(np.int64)))


def neighbor_group_counts(g: Graph) -> np.ndarray:
    """``(n, S)`` counts of 1-hop neighbors per group (self excluded)."""
    counts = np.zeros((g.n, g.n_groups), dtype=np.int64)
    np.add.at(counts, (g.edge_rows(), g.sensitive[g.indices]), 1)
    return counts


def group_quotas(g: Graph, beta: float) -> np.ndarray:
    """Number of non-self neighbors to keep per node and group.

    Single-group neighborhoods keep ``min(d, max(4, ceil(beta d)))``.
    Mixed neighborhoods keep, for every present group, as many members as
    the smallest nonzero self-augmented group count, the node itself
    counting toward its own group. For two groups this keeps the smaller
    group whole and downsamples the larger one to equal size.
    """
    if not 0 < beta <= 1:
        raise ValidationError("beta must lie in (0, 1]")
    nb = neighbor_group_counts(g)
    aug = nb.copy()
    aug[np.arange(g.n), g.sensitive] += 1
    present = aug > 0
    mixed = present.sum(axis=1) > 1
    k = np.where(present, aug, np.iinfo(np.int64).max).min(axis=1)
    own = np.zeros_like(nb)
    own[np.arange(g.n), g.sensitive] = 1
    quota = np.where(present, np.minimum(nb, k[:, None] - own), 0)
    single = ~mixed
    quota[single] = 0
    quota[single, g.sensitive[single]] = single_group_size(g.degrees[single], beta)
    return quota


def sampler_weights(g: Graph, mode: str, bt: BalanceTable | None = None) -> np.ndarray:
    """Per-edge (unnormalized) candidate weights for the given sampler."""
    if mode == "bemap":
        if bt is None:
            raise ValidationError("bemap sampling needs a BalanceTable")
        return np.asarray(bt.prob)
    if mode == "uniform":
        return np.ones(len(g.indices))
    if mode == "degree":
        return g.degrees[g.indices].astype(np.float64) ** 0.75
    raise ValidationError(f"unknown sampler mode {mode!r}")


def race_select(g: Graph, edge_weights: np.ndarray, quota: np.ndarray, rng):
    """Keep, per node and neighbor group, the ``quota`` first successive draws.

    Returns ``(keep, rank)`` aligned with ``g.indices``; ``rank`` is the
    draw order of each neighbor within its (node, group) candidate set.
    """
    rows = g.edge_rows()
    grp = g.sensitive[g.indices]
    keys = rng.standard_exponential(len(rows)) / edge_weights
    order = np.lexsort((keys, grp, rows))
    r, s = rows[order], grp[order]
    new_seg = np.ones(len(order), dtype=bool)
    new_seg[1:] = (r[1:] != r[:-1]) | (s[1:] != s[:-1])
    seg_start = np.maximum.accumulate(np.where(new_seg, np.arange(len(order)), 0))
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order)) - seg_start
    keep = rank < quota[rows, grp]
    return keep, rank


@dataclass(frozen=True, eq=False)
class EpochGraph:
    """Sampled neighborhoods of one epoch with their aggregation weights.

    ``indptr``/``indices`` list the retained (non-self) neighbors. ``matrix``
    is the sparse aggregation operator with entries alpha_ij, self included.
    """

    indptr: np.ndarray
    indices: np.ndarray
    matrix: sp.csr_array
    norm_mode: str

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def fair_neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def sizes(self) -> np.ndarray:
        """Self-augmented retained neighborhood sizes."""
        return np.diff(self.indptr) + 1

    def agg_weights(self, i: int):
        """``(columns, weights)`` of node ``i``'s aggregation row."""
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]


def build_epoch_graph(n: int, indptr, indices, norm_mode: str = "row") -> EpochGraph:
    """Aggregation operator over retained neighborhoods plus self loops."""
    if norm_mode not in NORM_MODES:
        raise ValidationError(f"norm_mode must be one of {NORM_MODES}")
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    size = (np.diff(indptr) + 1).astype(np.float64)
    rows = np.concatenate([np.repeat(np.arange(n), np.diff(indptr)), np.arange(n)])
    cols = np.concatenate([indices, np.arange(n)])
    if norm_mode == "row":
        vals = 1.0 / size[rows]
    else:
        vals = 1.0 / (np.sqrt(size[rows]) * np.sqrt(size[cols]))
    mat = sp.csr_array((vals, (rows, cols)), shape=(n, n))
    mat.sort_indices()
    return EpochGraph(indptr, indices, mat, norm_mode)


def full_epoch_graph(g: Graph, norm_mode: str = "row") -> EpochGraph:
    """Vanilla message passing over the complete self-augmented neighborhoods."""
    return build_epoch_graph(g.n, g.indptr, g.indices, norm_mode)


def sample_epoch_graph(g: Graph, bt: BalanceTable | None, mode: str = "bemap", beta: float = 0.25,
                       norm_mode: str = "row", rng=None) -> EpochGraph:
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if mode == "none":
        return full_epoch_graph(g, norm_mode)
    rng = np.random.default_rng(rng)
    keep, _ = race_select(g, sampler_weights(g, mode, bt), group_quotas(g, beta), rng)
    counts = np.bincount(g.edge_rows()[keep], minlength=g.n)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return build_epoch_graph(g.n, indptr, g.indices[keep], norm_mode)


def _successive_draws(weights: np.ndarray, k: int, rng) -> list[int]:
    w = np.array(weights, dtype=np.float64)
    picked = []
    for _ in range(k):
        j = int(rng.choice(len(w), p=w / w.sum()))
        picked.append(j)
        w[j] = 0.0
    return picked


def sample_fair_neighborhood(g: Graph, i: int, bt: BalanceTable | None, beta: float = 0.25,
                             rng=None, mode: str = "bemap") -> np.ndarray:
    """Sorted non-self neighbors of node ``i`` retained in one fair draw.

    Draws neighbor by neighbor with renormalization (the node-local
    counterpart of :func:`sample_epoch_graph`).
    """
    if not 0 < beta <= 1:
        raise ValidationError("beta must lie in (0, 1]")
    rng = np.random.default_rng(rng)
    nb = g.neighbors(i)
    if len(nb) == 0:
        return nb.copy()
    w = sampler_weights(g, mode, bt)[g.indptr[i]:g.indptr[i + 1]]
    grp = g.sensitive[nb]
    own = g.sensitive[i]
    aug = np.bincount(grp, minlength=g.n_groups)
    aug[own] += 1
    present = np.flatnonzero(aug)
    kept = []
    if len(present) == 1:
        k = int(single_group_size(len(nb), beta))
        kept = [nb[j] for j in _successive_draws(w, k, rng)]
    else:
        k = int(aug[present].min())
        for s in present:
            members = np.flatnonzero(grp == s)
            quota = k - (1 if s == own else 0)
            if quota >= len(members):
                kept.extend(nb[members])
            else:
                kept.extend(nb[members[j]] for j in _successive_draws(w[members], quota, rng))
    return np.sort(np.asarray(kept, dtype=np.int64))


def successive_subset_distribution(weights, k: int) -> dict[frozenset, float]:
    """Exact law of the unordered k-subset chosen by successive sampling.

    Brute-force enumeration over all ordered draw sequences; intended for
    small candidate sets.
    """
    w = np.asarray(weights, dtype=np.float64)
    out: dict[frozenset, float] = {}

    def walk(prefix, remaining, p):
        if len(prefix) == k:
            key = frozenset(prefix)
            out[key] = out.get(key, 0.0) + p
            return
        total = sum(w[j] for j in remaining)
        for j in remaining:
            walk(prefix + [j], remaining - {j}, p * w[j] / total)

    walk([], frozenset(range(len(w))), 1.0)
    return out


def inclusion_probabilities(weights, k: int) -> np.ndarray:
    """Exact per-candidate inclusion probability under successive sampling."""
    w = np.asarray(weights, dtype=np.float64)
    incl = np.zeros(len(w))
    for subset, p in successive_subset_distribution(w, k).items():
        for j in subset:
            incl[j] += p
    return incl
