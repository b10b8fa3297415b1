"""Monte-Carlo checks of the bias-residual claims on random graphs.

Aggregation here averages over the neighbors only (weight ``1/d_i``, no
self loop); the trainer's self-augmented convention lives in
:mod:`bemap.sampling`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import BemapError, ValidationError

MAX_RETRIES = 1000


@dataclass(frozen=True, eq=False)
class ResidualEnsemble:
    """Synthetic bias residuals: one row per node, Gaussian around its group mean."""

    residuals: np.ndarray
    groups: np.ndarray
    group_means: np.ndarray
    fair_mean: np.ndarray

    @property
    def dim(self) -> int:
        return self.residuals.shape[1]


def group_means_on_axis(n_groups: int, dim: int, separation: float = 2.0) -> np.ndarray:
    """Means spaced ``separation`` apart along the first axis, centred at 0."""
    mu = np.zeros((n_groups, dim))
    mu[:, 0] = separation * (np.arange(n_groups) - (n_groups - 1) / 2.0)
    return mu


def make_residuals(groups, dim: int = 8, separation: float = 2.0, rng=None) -> ResidualEnsemble:
    """Unit-variance spherical Gaussian residuals per group.

    ``fair_mean`` weights the group means by the empirical group fractions.
    """
    if dim < 1:
        raise ValidationError("residual dimension must be >= 1")
    rng = np.random.default_rng(rng)
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = int(groups.max()) + 1
    mu = group_means_on_axis(n_groups, dim, separation)
    b = mu[groups] + rng.standard_normal((len(groups), dim))
    r = np.bincount(groups, minlength=n_groups) / len(groups)
    return ResidualEnsemble(b, groups, mu, r @ mu)


# ---------------------------------------------------------------------------
# Linear decomposition of hidden embeddings


def _row_normalized(a: np.ndarray) -> np.ndarray:
    return a / a.sum(axis=1, keepdims=True)


def _full_rank_instance(n, rng, L, max_cond=1e6):
    for _ in range(MAX_RETRIES):
        a = np.triu((rng.random((n, n)) < 0.5).astype(np.float64), 1)
        a = a + a.T
        if (a.sum(axis=1) == 0).any():
            continue
        at = _row_normalized(a)
        if np.linalg.cond(np.linalg.matrix_power(at, L)) < max_cond:
            return at
    raise BemapError("could not draw a well-conditioned row-normalized adjacency")


def _invertible(d, rng, max_cond=1e4):
    for _ in range(MAX_RETRIES):
        w = rng.standard_normal((d, d)) / np.sqrt(d)
        if np.linalg.cond(w) < max_cond:
            return w
    raise BemapError("could not draw an invertible weight matrix")


def verify_lemma1(n: int = 10, d: int = 10, L: int = 2, rng=None, zero_residual: bool = False) -> float:
    """Max error of the fair/bias split of every hidden layer of a linear GCN.

    Builds an invertible ``A~ = D^-1 A`` and square invertible weights, sets
    the first-layer input to ``(A~^L)^-1 Z W^-1`` with ``Z = Z_t + Z_b`` and
    compares each layer input ``h^(l)`` of the forward pass with
    ``(t^(l) + b^(l)) W1...W(l-1)``. The final layer output is compared with
    ``Z`` too. With ``zero_residual`` the bias part is zero and its pieces
    are checked to vanish.
    """
    if n < 2 or d < 1 or L < 1:
        raise ValidationError("need n >= 2, d >= 1, L >= 1")
    rng = np.random.default_rng(rng)
    at = _full_rank_instance(n, rng, L)
    ws = [_invertible(d, rng) for _ in range(L)]
    w_all = np.linalg.multi_dot(ws) if L > 1 else ws[0]
    z_t = rng.standard_normal((n, d))
    z_b = np.zeros((n, d)) if zero_residual else rng.standard_normal((n, d))
    a_pow = np.linalg.matrix_power(at, L)

    def lift(z):
        # (A~^L)^-1 Z W^-1 via two solves
        return np.linalg.solve(w_all.T, np.linalg.solve(a_pow, z).T).T

    t1, b1 = lift(z_t), lift(z_b)
    err = 0.0
    h = t1 + b1
    w_prefix = np.eye(d)
    for l in range(1, L + 1):
        a_l = np.linalg.matrix_power(at, l - 1)
        t_l, b_l = a_l @ t1, a_l @ b1
        err = max(err, float(np.abs(h - (t_l + b_l) @ w_prefix).max()))
        if zero_residual:
            err = max(err, float(np.abs(b_l).max()))
        h = at @ h @ ws[l - 1]
        w_prefix = w_prefix @ ws[l - 1]
    return max(err, float(np.abs(h - (z_t + z_b)).max()))


# ---------------------------------------------------------------------------
# Shrinkage of residual spread under plain message passing


def within_group_gilbert(groups, p: float, rng) -> sp.csr_array:
    """Gilbert graph restricted to same-group pairs (each kept with prob. ``p``)."""
    groups = np.asarray(groups)
    n = len(groups)
    iu, ju = np.triu_indices(n, k=1)
    same = groups[iu] == groups[ju]
    keep = same & (rng.random(iu.size) < p)
    a = sp.coo_array((np.ones(keep.sum()), (iu[keep], ju[keep])), shape=(n, n))
    return sp.csr_array(a + a.T)


def circulant_regular(n: int, d: int) -> sp.csr_array:
    """``d``-regular circulant graph (``d`` even, ``d < n``): a cycle with chords."""
    if d % 2 or not 0 < d < n:
        raise ValidationError("circulant_regular needs an even degree 0 < d < n")
    rows = np.repeat(np.arange(n), d)
    offsets = np.concatenate([np.arange(1, d // 2 + 1), -np.arange(1, d // 2 + 1)])
    cols = (rows + np.tile(offsets, n)) % n
    return sp.csr_array((np.ones(n * d), (rows, cols)), shape=(n, n))


def neighbor_mean(adj: sp.csr_array, b: np.ndarray) -> np.ndarray:
    """``b'_i = (1/d_i) sum_{j in N(i)} b_j``; isolated nodes are an error."""
    deg = np.asarray(adj.sum(axis=1)).ravel()
    if (deg == 0).any():
        raise ValidationError("isolated node: neighbor mean undefined")
    return (adj @ b) / deg[:, None]


@dataclass
class ShrinkageResult:
    empirical_ratio: float
    predicted_ratio: float
    centroid_shift_z: float
    trials: int
    rejected_graphs: int

    @property
    def relative_error(self) -> float:
        return abs(self.empirical_ratio - self.predicted_ratio) / self.predicted_ratio


def verify_theorem1(n: int = 200, p: float = 0.05, d: int = 8, trials: int = 1000, rng=None,
                    group_fractions=(0.5, 0.5), separation: float = 2.0, graph=None) -> ShrinkageResult:
    """Compare the post/pre spread ratio of residuals with the mean of ``1/d_i``.

    Each trial draws group labels, a graph and fresh residuals, applies one
    neighbor-mean step, and accumulates ``||b - mu(v_i)||^2`` before and
    after, ``mu(v_i)`` being the mean of the node's group distribution.
    The default graph keeps edges inside groups only, so neighbor residuals
    share the node's distribution; graphs with isolated nodes are redrawn. ``graph`` (an adjacency) overrides the random draw.

    Also reports the largest shift of a group centroid across the step in
    standard-error units (pooled over trials).
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if not 0 < p <= 1:
        raise ValidationError("p must lie in (0, 1]")
    if trials == 1:
        warnings.warn("a single trial gives no usable Monte-Carlo estimate", RuntimeWarning)
    rng = np.random.default_rng(rng)
    fractions = np.asarray(group_fractions, dtype=np.float64)
    pre = post = inv_deg = 0.0
    n_nodes = 0
    shifts = []
    rejected = 0
    for _ in range(trials):
        for _ in range(MAX_RETRIES):
            groups = rng.choice(len(fractions), size=n, p=fractions / fractions.sum())
            adj = graph if graph is not None else within_group_gilbert(groups, p, rng)
            deg = np.asarray(adj.sum(axis=1)).ravel()
            if (deg > 0).all():
                break
            rejected += 1
            if graph is not None:
                raise ValidationError("supplied graph has isolated nodes")
        else:
            raise BemapError("could not draw a graph without isolated nodes")
        ens = make_residuals(groups, d, separation, rng)
        b = ens.residuals
        b_post = neighbor_mean(adj, b)
        present = np.unique(groups)
        centroids = np.zeros((len(fractions), d))
        for s in present:
            centroids[s] = b[groups == s].mean(axis=0)
        mu = ens.group_means[groups]
        pre += float(((b - mu) ** 2).sum())
        post += float(((b_post - mu) ** 2).sum())
        inv_deg += float((1.0 / deg).sum())
        n_nodes += n
        shifts.append(np.stack([b_post[groups == s].mean(axis=0) - centroids[s] if s in present
                                else np.zeros(d) for s in range(len(fractions))]))
    shifts = np.asarray(shifts)  # trials x groups x d
    shift_z = 0.0
    if trials > 1:
        mean = shifts.mean(axis=0)
        se = shifts.std(axis=0, ddof=1) / np.sqrt(trials)
        se_norm = np.sqrt((se ** 2).sum(axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            z = np.where(se_norm > 0, np.linalg.norm(mean, axis=1) / se_norm, 0.0)
        shift_z = float(z.max())
    return ShrinkageResult(post / pre, inv_deg / n_nodes, shift_z, trials, rejected)


# ---------------------------------------------------------------------------
# Balanced neighborhoods: centroid consistency and fair shrinkage


@dataclass
class BalancedResult:
    centroid_gap: float
    centroid_gap_z: float
    group_separation_z: float
    shrinkage_ratio: float
    shrinkage_se: float
    own_share: float

    def __iter__(self):
        # unpacks as (centroid_gap, shrinkage_ratio)
        return iter((self.centroid_gap, self.shrinkage_ratio))


def _neighborhoods(groups, size, own_count, rng):
    """For every node: itself, ``own_count - 1`` same-group and
    ``size - own_count`` other-group members, drawn uniformly without
    replacement (two groups)."""
    n = len(groups)
    members = [np.flatnonzero(groups == s) for s in (0, 1)]
    out = np.empty((n, size), dtype=np.int64)
    out[:, 0] = np.arange(n)
    for i in range(n):
        s = groups[i]
        same = members[s][members[s] != i]
        out[i, 1:own_count] = rng.choice(same, own_count - 1, replace=False)
        out[i, own_count:] = rng.choice(members[1 - s], size - own_count, replace=False)
    return out


def verify_lemma3_theorem2(n: int = 5000, trials: int = 20, neighborhood_size: int = 4, rng=None,
                           d: int = 8, separation: float = 2.0, own_share: float = 0.5) -> BalancedResult:
    """Centroid and spread of residuals after averaging over mixed neighborhoods.

    Two equal groups. Each node averages over itself plus sampled members so
    that a fraction ``own_share`` of its self-augmented neighborhood comes
    from its own group (1/2 is the balanced case; 3/4 gives the 3:1 skewed
    control). Returns the largest distance of a post-step group centroid
    from the fair mean, that distance in standard errors (from the spread of
    per-trial centroids), the separation between the two post-step group
    centroids in standard errors, and the shrinkage ratio
    ``E||b' - mu_bar||^2 / E||b - mu_bar||^2`` with its standard error.
    """
    if neighborhood_size < 4:
        raise ValidationError("neighborhoods must have at least 4 members")
    own = int(round(own_share * neighborhood_size))
    if not 1 <= own < neighborhood_size or not np.isclose(own, own_share * neighborhood_size):
        raise ValidationError("own_share * neighborhood_size must be an integer in [1, size)")
    if trials < 2:
        raise ValidationError("need at least 2 trials for standard errors")
    rng = np.random.default_rng(rng)
    groups = np.repeat([0, 1], [n - n // 2, n // 2])
    centroids, ratios = [], []
    for _ in range(trials):
        ens = make_residuals(groups, d, separation, rng)
        nb = _neighborhoods(groups, neighborhood_size, own, rng)
        b_post = ens.residuals[nb].mean(axis=1)
        mu_bar = ens.group_means.mean(axis=0)
        centroids.append([b_post[groups == s].mean(axis=0) for s in (0, 1)])
        ratios.append(((b_post - mu_bar) ** 2).sum() / ((ens.residuals - mu_bar) ** 2).sum())
    centroids = np.asarray(centroids)  # trials x 2 x d
    mu_bar = group_means_on_axis(2, d, separation).mean(axis=0)
    mean = centroids.mean(axis=0)
    se = np.sqrt((centroids.var(axis=0, ddof=1) / trials).sum(axis=1))
    gaps = np.linalg.norm(mean - mu_bar, axis=1)
    diff = centroids[:, 0] - centroids[:, 1]
    diff_se = np.sqrt((diff.var(axis=0, ddof=1) / trials).sum())
    ratios = np.asarray(ratios)
    return BalancedResult(
        centroid_gap=float(gaps.max()),
        centroid_gap_z=float((gaps / se).max()),
        group_separation_z=float(np.linalg.norm(diff.mean(axis=0)) / diff_se),
        shrinkage_ratio=float(ratios.mean()),
        shrinkage_se=float(ratios.std(ddof=1) / np.sqrt(trials)),
        own_share=own / neighborhood_size,
    )
