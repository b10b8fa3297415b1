"""Utility and group-fairness metrics, the leakage probe and report records."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError, ValidationError
from .graph import Graph, SplitMasks, ratio_bins

N_BINS = 10


def _select(mask, *arrays):
    if mask is None:
        return tuple(np.asarray(a) for a in arrays)
    m = np.asarray(mask)
    if m.dtype != bool:
        m = np.asarray(m, dtype=np.int64)
    return tuple(np.asarray(a)[m] for a in arrays)


def accuracy(pred, labels, mask=None) -> float:
    p, y = _select(mask, pred, labels)
    if p.size == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return float(np.mean(p == y))


def delta_sp(pred, sensitive, mask=None) -> float:
    """|P(yhat=1 | s=1) - P(yhat=1 | s=0)|."""
    p, s = _select(mask, pred, sensitive)
    rates = []
    for grp in (0, 1):
        sel = s == grp
        if not sel.any():
            raise UndefinedMetricError(f"group {grp} is empty; statistical parity is undefined")
        rates.append(np.count_nonzero(p[sel] == 1) / np.count_nonzero(sel))
    return abs(rates[1] - rates[0])


def delta_eo(pred, labels, sensitive, mask=None) -> float:
    """|P(yhat=1 | y=1, s=1) - P(yhat=1 | y=1, s=0)|."""
    p, y, s = _select(mask, pred, labels, sensitive)
    rates = []
    for grp in (0, 1):
        sel = (s == grp) & (y == 1)
        if not sel.any():
            raise UndefinedMetricError(f"group {grp} has no positives; equal opportunity is undefined")
        rates.append(np.count_nonzero(p[sel] == 1) / np.count_nonzero(sel))
    return abs(rates[1] - rates[0])


def auc(scores, labels, mask=None) -> float:
    """ROC AUC as the normalized Mann-Whitney U statistic (ties count 1/2)."""
    sc, y = _select(mask, scores, labels)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = int(np.count_nonzero(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(sc, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def distance_based_bias(embeddings, sensitive, mask=None) -> float:
    """Reciprocal mean squared distance of rows to their group centroid.

    Returns ``inf`` (with a warning) when every row sits on its centroid.
    """
    e, s = _select(mask, embeddings, sensitive)
    e = np.asarray(e, dtype=np.float64).reshape(len(s), -1)
    if e.shape[0] == 0:
        raise UndefinedMetricError("distance-based bias of an empty set")
    sq = np.zeros(e.shape[0])
    for grp in np.unique(s):
        sel = s == grp
        sq[sel] = ((e[sel] - e[sel].mean(axis=0)) ** 2).sum(axis=1)
    mean_sq = sq.mean()
    if mean_sq == 0:
        warnings.warn("all embeddings coincide with their group centroid; bias is infinite", RuntimeWarning)
        return math.inf
    return float(1.0 / mean_sq)


def relative_reduction(delta_method: float, delta_vanilla: float) -> float:
    """Percent reduction of a bias measure relative to the vanilla model."""
    if delta_vanilla == 0:
        raise UndefinedMetricError("relative reduction against a zero baseline is undefined")
    if delta_vanilla < 0:
        raise ValidationError("bias measures are non-negative")
    return (1.0 - delta_method / delta_vanilla) * 100.0


def fit_logistic(x, y, iterations=500, lr=0.1):
    """Binary logistic regression by full-batch gradient descent.

    Returns ``(weights, bias)``; no regularization.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iterations):
        z = x @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        r = (p - y) / n
        w -= lr * (x.T @ r)
        b -= lr * r.sum()
    return w, b


@dataclass
class ProbeResult:
    accuracy: float
    bin_counts: np.ndarray
    bin_accuracy: np.ndarray  # NaN marks an empty bin

    def bin_records(self):
        out = []
        for k in range(len(self.bin_counts)):
            acc = None if self.bin_counts[k] == 0 else float(self.bin_accuracy[k])
            out.append({"bin": k, "lo": k / len(self.bin_counts), "hi": (k + 1) / len(self.bin_counts),
                        "count": int(self.bin_counts[k]), "accuracy": acc})
        return out


def probe_sensitive_leakage(embeddings, sensitive, g: Graph, split: SplitMasks, rng=None,
                            iterations=500, lr=0.1) -> ProbeResult:
    """Predict the sensitive attribute from embeddings with logistic regression.

    Trained on ``split.train``, evaluated on ``split.test``; test accuracy is
    also broken down by majority-neighbor-ratio bin. Embedding columns are
    standardized with training statistics before fitting. ``rng`` is accepted
    for interface symmetry; the fit is deterministic.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    s = np.asarray(sensitive)
    mu = e[split.train].mean(axis=0)
    sd = e[split.train].std(axis=0)
    sd[sd == 0] = 1.0
    z = (e - mu) / sd
    w, b = fit_logistic(z[split.train], s[split.train], iterations, lr)
    correct = ((z[split.test] @ w + b > 0).astype(np.int64) == s[split.test])
    bins = ratio_bins(g, N_BINS)[split.test]
    counts = np.bincount(bins, minlength=N_BINS)
    hits = np.bincount(bins, weights=correct, minlength=N_BINS)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_bin = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    acc = float(correct.mean()) if correct.size else math.nan
    return ProbeResult(acc, counts, per_bin)


REPORT_FIELDS = ("acc", "auc", "delta_sp", "delta_eo", "distance_bias", "n_eval")


@dataclass
class FairnessReport:
    acc: float
    auc: float
    delta_sp: float
    delta_eo: float
    n_eval: int
    distance_bias: float | None = None
    probe_bins: list = field(default_factory=list)

    def to_record(self) -> dict:
        """Flat record in ``REPORT_FIELDS`` order."""
        return {k: getattr(self, k) for k in REPORT_FIELDS}


def _or_none(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def evaluate(proba, labels, sensitive, mask, embeddings=None) -> FairnessReport:
    """Report for class-1 probabilities ``proba`` over ``mask``."""
    proba = np.asarray(proba, dtype=np.float64)
    pred = (proba > 0.5).astype(np.int64)
    m = np.asarray(mask)
    return FairnessReport(
        acc=accuracy(pred, labels, m),
        auc=_or_none(auc, proba, labels, m),
        delta_sp=_or_none(delta_sp, pred, sensitive, m),
        delta_eo=_or_none(delta_eo, pred, labels, sensitive, m),
        n_eval=int(m.sum()) if m.dtype == bool else int(m.size),
        distance_bias=None if embeddings is None else _or_none(distance_based_bias, embeddings, sensitive, m),
    )


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=False) + "\n")


def write_csv(records, path, fields=None) -> None:
    records = list(records)
    if fields is None:
        fields = list(records[0]) if records else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fields})
