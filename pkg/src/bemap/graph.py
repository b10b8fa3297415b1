"""Immutable attributed graphs, neighborhood queries and dataset splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, ValidationError

UNLABELED = -1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form with node features and demographics.

    Neighbor lists are sorted, duplicate-free and never contain the node
    itself. ``labels`` uses ``UNLABELED`` (-1) for nodes without a class.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray
    n_groups: int = 2
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "sensitive", _frozen(np.asarray(self.sensitive, dtype=np.int64)))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        object.__setattr__(self, "degrees", _frozen(np.diff(self.indptr)))
        n = self.n
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError(f"features must have shape (n, F) with n={n}")
        if self.sensitive.shape != (n,) or self.labels.shape != (n,):
            raise ValidationError("sensitive and labels must have one entry per node")
        if self.n_groups < 2:
            raise ValidationError("at least two demographic groups are required")
        if n and (self.sensitive.min() < 0 or self.sensitive.max() >= self.n_groups):
            raise ValidationError(f"sensitive values must lie in [0, {self.n_groups})")
        if np.any((self.labels != UNLABELED) & (self.labels != 0) & (self.labels != 1)):
            raise ValidationError("labels must be 0, 1 or -1 (unlabeled)")

    @classmethod
    def from_edges(cls, n, edges, features=None, sensitive=None, labels=None, n_groups=None):
        """Build a graph from an iterable or (m, 2) array of node pairs.

        Edges are symmetrized and deduplicated; self-loops are dropped.
        """
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValidationError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        adj = sp.csr_array((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
        adj.sum_duplicates()
        adj.sort_indices()
        if features is None:
            features = np.zeros((n, 0))
        if sensitive is None:
            sensitive = np.zeros(n, dtype=np.int64)
        if labels is None:
            labels = np.full(n, UNLABELED)
        sensitive = np.asarray(sensitive, dtype=np.int64)
        if n_groups is None:
            n_groups = max(2, int(sensitive.max()) + 1 if n else 2)
        return cls(adj.indptr, adj.indices, features, sensitive, labels, n_groups)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edge_rows(self) -> np.ndarray:
        """Source node of every stored (directed) CSR entry."""
        return np.repeat(np.arange(self.n), self.degrees)

    def adjacency(self) -> sp.csr_array:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_array((data, self.indices, self.indptr), shape=(self.n, self.n))

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.sensitive, minlength=self.n_groups)

    def majority_group(self) -> int:
        """Most populous group; ties resolve to the lowest group id."""
        return int(np.argmax(self.group_sizes()))

    def with_features(self, features) -> "Graph":
        return Graph(self.indptr, self.indices, features, self.sensitive, self.labels, self.n_groups)


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def standardize(features: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns; constant columns become zero."""
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def _parse_int(token, path, line_no, what):
    try:
        return int(token)
    except ValueError:
        raise ParseError(path, line_no, f"expected integer {what}, got {token!r}") from None


def load_graph(edge_list_path, node_table_path, n_groups=None, standardize_features=True) -> Graph:
    """Load a graph from an edge list and a node-table CSV.

    The node table has a header ``id,sensitive,label,f0,f1,...``; node ids are
    remapped to ``0..n-1`` in file order. The edge list holds one
    whitespace-separated ``u v`` pair of node ids per line, ``#`` starts a
    comment.
    """
    node_table_path = Path(node_table_path)
    ids, sens, labels, feats = {}, [], [], []
    with open(node_table_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["id", "sensitive", "label"]:
            raise ParseError(node_table_path, 1, "header must start with id,sensitive,label")
        n_feat = len(header) - 3
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_feat + 3:
                raise ParseError(node_table_path, line_no, f"expected {n_feat + 3} columns, got {len(row)}")
            node_id = _parse_int(row[0].strip(), node_table_path, line_no, "id")
            if node_id in ids:
                raise ParseError(node_table_path, line_no, f"duplicate node id {node_id}")
            s = _parse_int(row[1].strip(), node_table_path, line_no, "sensitive")
            y = _parse_int(row[2].strip(), node_table_path, line_no, "label")
            if s < 0 or (n_groups is not None and s >= n_groups):
                raise ValidationError(f"{node_table_path}:{line_no}: sensitive value {s} out of range")
            if y not in (UNLABELED, 0, 1):
                raise ValidationError(f"{node_table_path}:{line_no}: label {y} out of range")
            try:
                feats.append([float(c) for c in row[3:]])
            except ValueError:
                raise ParseError(node_table_path, line_no, "non-numeric feature value") from None
            ids[node_id] = len(ids)
            sens.append(s)
            labels.append(y)

    edge_list_path = Path(edge_list_path)
    edges = []
    with open(edge_list_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            content = line.split("#", 1)[0].split()
            if not content:
                continue
            if len(content) != 2:
                raise ParseError(edge_list_path, line_no, f"expected 'u v', got {line.strip()!r}")
            u = _parse_int(content[0], edge_list_path, line_no, "node id")
            v = _parse_int(content[1], edge_list_path, line_no, "node id")
            for w in (u, v):
                if w not in ids:
                    raise ValidationError(f"{edge_list_path}:{line_no}: unknown node id {w}")
            edges.append((ids[u], ids[v]))

    n = len(ids)
    x = np.asarray(feats, dtype=np.float64).reshape(n, -1)
    if standardize_features:
        x = standardize(x)
    sens_arr = np.asarray(sens, dtype=np.int64)
    if n_groups is None:
        n_groups = max(2, int(sens_arr.max()) + 1) if n else 2
    return Graph.from_edges(n, edges, x, sens_arr, labels, n_groups)


def save_graph(g: Graph, edge_list_path, node_table_path) -> None:
    """Write ``g`` in the format read by :func:`load_graph`."""
    rows = g.edge_rows()
    with open(edge_list_path, "w") as fh:
        for u, v in zip(rows, g.indices):
            if u < v:
                fh.write(f"{u} {v}\n")
    with open(node_table_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "sensitive", "label"] + [f"f{k}" for k in range(g.features.shape[1])])
        for i in range(g.n):
            w.writerow([i, int(g.sensitive[i]), int(g.labels[i])] + [repr(float(v)) for v in g.features[i]])


def khop_group_counts(g: Graph, hops: int) -> np.ndarray:
    """Per-node counts, by group, of distinct nodes at distance 1..hops.

    Returns an ``(n, n_groups)`` integer array. The node itself is excluded.
    """
    if hops < 1:
        raise ValidationError("hops must be >= 1")
    n = g.n
    step = (g.adjacency() + sp.eye_array(n, format="csr")).astype(bool).tocsr()
    reach = step
    for _ in range(hops - 1):
        reach = (reach @ step).astype(bool).tocsr()
    # every node reaches itself through the self-loop in ``step``
    reach = (reach.astype(np.int64) - sp.eye_array(n, dtype=np.int64, format="csr")).tocsr()
    reach.eliminate_zeros()
    onehot = sp.csr_array(
        (np.ones(n, dtype=np.int64), (np.arange(n), g.sensitive)), shape=(n, g.n_groups)
    )
    return np.asarray((reach @ onehot).toarray(), dtype=np.int64)


def majority_neighbor_ratios(g: Graph) -> np.ndarray:
    """Fraction of each node's neighbors in the dataset-wide majority group.

    Isolated nodes get 0.
    """
    maj = g.majority_group()
    hits = np.bincount(g.edge_rows(), weights=(g.sensitive[g.indices] == maj), minlength=g.n)
    out = np.zeros(g.n)
    nz = g.degrees > 0
    out[nz] = hits[nz] / g.degrees[nz]
    return out


def majority_neighbor_ratio(g: Graph, i: int) -> float:
    nb = g.neighbors(i)
    if len(nb) == 0:
        return 0.0
    return float(np.mean(g.sensitive[nb] == g.majority_group()))


def ratio_bins(g: Graph, n_bins: int = 10) -> np.ndarray:
    """Equal-width bin index of every node's majority-neighbor ratio.

    Bins are ``[0, 1/n_bins), ..., [1 - 1/n_bins, 1]``. Integer arithmetic
    keeps exact ratios such as 3/10 out of the bin below.
    """
    maj = g.majority_group()
    hits = np.bincount(g.edge_rows(), weights=(g.sensitive[g.indices] == maj), minlength=g.n)
    hits = hits.astype(np.int64)
    deg = np.maximum(g.degrees, 1)
    return np.minimum(hits * n_bins // deg, n_bins - 1)


def make_splits(g: Graph, fractions=(0.5, 0.25, 0.25), seed: int = 0) -> SplitMasks:
    """Randomly partition the labeled nodes into train/val/test index sets."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    labeled = np.flatnonzero(g.labels != UNLABELED)
    perm = np.random.default_rng(seed).permutation(labeled)
    m = len(perm)
    n_train = int(np.floor(fr[0] * m + 1e-9))
    n_val = int(np.floor(fr[1] * m + 1e-9))
    return SplitMasks(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train:n_train + n_val]),
        test=np.sort(perm[n_train + n_val:]),
    )


def _group_means(n_groups: int, dim: int, mean_sep: float) -> np.ndarray:
    means = np.zeros((n_groups, dim))
    if dim:
        means[:, 0] = mean_sep * (np.arange(n_groups) - (n_groups - 1) / 2)
    return means


def _upper_pairs(n: int, prob, rng) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < prob
    return np.stack([iu[keep], ju[keep]], axis=1)


def generate_gilbert(n, p, group_fractions=(0.5, 0.5), seed=0, feature_dim=8, mean_sep=1.0) -> Graph:
    """Gilbert random graph: every node pair is linked independently with prob ``p``.

    Groups are i.i.d. draws from ``group_fractions``. Features are spherical
    unit-variance Gaussians whose group means differ by ``mean_sep`` on the
    first coordinate. Nodes are unlabeled.
    """
    if not 0 <= p <= 1:
        raise ValidationError("p must lie in [0, 1]")
    fr = np.asarray(group_fractions, dtype=np.float64)
    if fr.ndim != 1 or len(fr) < 2 or np.any(fr < 0) or abs(fr.sum() - 1) > 1e-9:
        raise ValidationError("group_fractions must be a probability vector over >= 2 groups")
    rng = np.random.default_rng(seed)
    groups = rng.choice(len(fr), size=n, p=fr)
    edges = _upper_pairs(n, p, rng)
    x = _group_means(len(fr), feature_dim, mean_sep)[groups] + rng.standard_normal((n, feature_dim))
    return Graph.from_edges(n, edges, x, groups, None, len(fr))


def generate_biased(
    n=600,
    minority_fraction=0.3,
    avg_degree=8.0,
    group_homophily=0.85,
    label_homophily=0.7,
    positive_rates=(0.6, 0.3),
    label_signal=0.8,
    group_signal=0.3,
    bridge_fraction=0.0,
    degree_spread=0.0,
    group_feature_smoothing=0,
    n_label_features=4,
    n_group_features=4,
    n_noise_features=4,
    seed=0,
) -> Graph:
    """Synthetic graph with group-correlated labels, features and edges.

    Group 0 is the majority and ``positive_rates[s]`` is P(y=1 | s). Edges
    follow a degree-corrected block model: the affinity of a pair is the
    product of a group factor and a label factor. The label factor is
    ``label_homophily`` for equal labels and its complement otherwise. The
    group factor uses the mean of the two endpoints' homophily, which is
    ``group_homophily`` for ordinary nodes and 1/2 for the
    ``bridge_fraction`` of nodes that mix freely across groups. Degree
    propensities are log-normal with log-scale ``degree_spread`` (0 gives a
    plain block model). Label features shift by ``label_signal`` with y,
    group features by ``group_signal`` with s. The group features are then
    averaged ``group_feature_smoothing`` times over each node's
    self-augmented neighborhood, so nodes embedded in one group carry a
    purer group signal than nodes that straddle both. Features are
    standardized.
    """
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < minority_fraction).astype(np.int64)
    y = (rng.random(n) < np.asarray(positive_rates)[s]).astype(np.int64)
    h = np.where(rng.random(n) < bridge_fraction, 0.5, group_homophily)
    theta = np.exp(degree_spread * rng.standard_normal(n))
    iu, ju = np.triu_indices(n, k=1)
    h_pair = 0.5 * (h[iu] + h[ju])
    aff = np.where(s[iu] == s[ju], h_pair, 1 - h_pair) * np.where(
        y[iu] == y[ju], label_homophily, 1 - label_homophily
    ) * theta[iu] * theta[ju]
    scale = avg_degree * n / 2.0 / max(float(aff.sum()), 1e-12)
    keep = rng.random(iu.size) < np.clip(aff * scale, 0, 1)
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    g = Graph.from_edges(n, edges, np.zeros((n, 0)), s, y, 2)
    x_group = rng.standard_normal((n, n_group_features)) + group_signal * (s[:, None] - 0.5)
    if group_feature_smoothing:
        step = g.adjacency() + sp.eye_array(n, format="csr")
        inv = 1.0 / (g.degrees + 1.0)
        for _ in range(group_feature_smoothing):
            x_group = inv[:, None] * (step @ x_group)
    parts = [
        rng.standard_normal((n, n_label_features)) + label_signal * (y[:, None] - 0.5),
        x_group,
        rng.standard_normal((n, n_noise_features)),
    ]
    return g.with_features(standardize(np.concatenate(parts, axis=1)))
