"""Evaluation metrics: macro F1 and per-class recall/precision, graded
ordinal metrics, the privacy-leakage score, and an exact small-sample
Wilcoxon signed-rank test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class AttackRates:
    tpr: float
    fpr: float

    def __post_init__(self):
        if not (0 <= self.tpr <= 1 and 0 <= self.fpr <= 1):
            raise ValueError("rates must lie in [0, 1]")


def _counts(true_labels, predicted_labels, classes=None):
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if t.size == 0:
        raise ValueError("empty predictions")
    if t.shape != p.shape:
        raise ValueError("true and predicted labels differ in length")
    if classes is None:
        classes = sorted(set(t.tolist()) | set(p.tolist()))
    return t, p, list(classes)


def class_recall(true_labels, predicted_labels, cls) -> float:
    t, p, _ = _counts(true_labels, predicted_labels)
    tp = int(np.sum((t == cls) & (p == cls)))
    fn = int(np.sum((t == cls) & (p != cls)))
    return tp / (tp + fn) if (tp + fn) else 0.0


def class_precision(true_labels, predicted_labels, cls) -> float:
    t, p, _ = _counts(true_labels, predicted_labels)
    tp = int(np.sum((t == cls) & (p == cls)))
    fp = int(np.sum((t != cls) & (p == cls)))
    return tp / (tp + fp) if (tp + fp) else 0.0


def macro_f1(true_labels, predicted_labels, classes=None) -> float:
    """Unweighted mean of per-class F1; zero-denominator F1 counts as 0."""
    t, p, classes = _counts(true_labels, predicted_labels, classes)
    f1s = []
    for cls in classes:
        rec = class_recall(t, p, cls)
        prec = class_precision(t, p, cls)
        f1s.append(2 * prec * rec / (prec + rec) if (prec + rec) else 0.0)
    return float(np.mean(f1s))


def graded_metrics(true_labels, predicted_labels):
    """Ordinal (graded) precision/recall/fscore.

    With t = fraction of exact matches, fn = fraction under-predicted
    (actual > predicted) and fp = fraction over-predicted, which partition
    the data (t + fn + fp = 1):
        GR = t / (t + fn), GP = t / (t + fp), GF = harmonic mean.
    """
    a, p, _ = _counts(true_labels, predicted_labels)
    n = a.size
    t = float(np.sum(p == a)) / n
    fn = float(np.sum(a > p)) / n
    fp = float(np.sum(p > a)) / n
    gr = t / (t + fn) if (t + fn) else 0.0
    gp = t / (t + fp) if (t + fp) else 0.0
    gf = 2 * gp * gr / (gp + gr) if (gp + gr) else 0.0
    return gp, gr, gf


def privacy_leakage(rates: AttackRates) -> float:
    """Adversary advantage: true-positive rate minus false-positive rate."""
    return rates.tpr - rates.fpr


EXACT_WILCOXON_MAX_N = 20


def _signed_rank_stat(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired inputs must have equal length")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("degenerate pairs: all differences are zero")
    from scipy.stats import rankdata

    ranks = rankdata(np.abs(d))
    w_plus = float(np.sum(ranks[d > 0]))
    return d, ranks, w_plus


def wilcoxon_signed_rank(paired_a, paired_b) -> float:
    """Two-sided signed-rank p-value.

    Exact null distribution (all 2^n sign assignments, handles tied ranks)
    for n <= 20; normal approximation with tie correction above.
    """
    d, ranks, w_plus = _signed_rank_stat(paired_a, paired_b)
    n = d.size
    if n < 5:
        raise ValueError("need at least 5 nonzero differences")
    if n <= EXACT_WILCOXON_MAX_N:
        # Distribution of W+ over sign assignments via convolution on
        # doubled ranks (average ranks are half-integers).
        scaled = np.round(2 * ranks).astype(np.int64)
        total = int(scaled.sum())
        dist = np.zeros(total + 1)
        dist[0] = 1.0
        for r in scaled:
            shifted = np.zeros_like(dist)
            shifted[r:] = dist[: total + 1 - r]
            dist = dist + shifted
        dist /= 2.0**n
        w2 = int(round(2 * w_plus))
        p_le = float(dist[: w2 + 1].sum())
        p_ge = float(dist[w2:].sum())
        return min(1.0, 2.0 * min(p_le, p_ge))
    mean = n * (n + 1) / 4.0
    tie_term = 0.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    tie_term = float(np.sum(counts**3 - counts)) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    z = (w_plus - mean) / math.sqrt(var)
    return float(2 * min(norm.cdf(z), 1 - norm.cdf(z)))
