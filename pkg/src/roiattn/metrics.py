"""AUC, F1 and recall-at-FPR for binary scores.

R@x is recall at the operating point with the best recall among thresholds
whose empirical false-positive rate is at most x. Predictions are positive
when ``score >= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

FPR_TARGETS = (0.1, 0.3, 0.5)


class MetricError(ValueError):
    pass


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise MetricError(f"scores and labels differ in length ({s.size} vs {y.size})")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    return s, y.astype(bool)


def _both_classes(y):
    if y.all() or not y.any():
        raise MetricError("AUC undefined: scored set contains a single class")


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    s, y = _as_arrays(scores, labels)
    _both_classes(y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s)  # average ranks for ties
    # twice the U statistic is an exact integer, divide once at the end
    u2 = 2.0 * ranks[y].sum() - n_pos * (n_pos + 1.0)
    return float(u2 / (2.0 * n_pos * n_neg))


def f1(scores, labels, threshold: float) -> float:
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    fn = int((~pred & y).sum())
    return _f1(tp, fp, fn)


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def best_f1(scores, labels) -> tuple[float, float]:
    """Max F1 over the lowest score and midpoints between distinct scores.

    Returns (f1, threshold); the lower threshold wins ties.
    """
    s, y = _as_arrays(scores, labels)
    if s.size == 0:
        raise MetricError("empty scored set")
    distinct = np.unique(s)
    candidates = np.concatenate([distinct[:1], (distinct[:-1] + distinct[1:]) / 2.0])
    best, best_t = -1.0, float(candidates[0])
    for t in candidates:
        value = f1(s, y, t)
        if value > best:
            best, best_t = value, float(t)
    return best, best_t


def recall_at_fpr(scores, labels, fpr_target: float) -> float:
    fpr, tpr = roc_curve(scores, labels)
    # slack absorbs k/n rounding, e.g. 3/10 > 0.3 in binary
    return float(tpr[fpr <= fpr_target + 1e-12].max())


@dataclass
class MetricReport:
    auc: float
    f1: float
    f1_threshold: float
    r_at: dict[str, float] = field(default_factory=dict)
    n_pos: int = 0
    n_neg: int = 0

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "f1": self.f1,
            "f1_threshold": self.f1_threshold,
            "r_at": dict(self.r_at),
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }


def evaluate(scores, labels) -> MetricReport:
    s, y = _as_arrays(scores, labels)
    f, t = best_f1(s, y)
    return MetricReport(
        auc=roc_auc(s, y),
        f1=f,
        f1_threshold=t,
        r_at={str(x): recall_at_fpr(s, y, x) for x in FPR_TARGETS},
        n_pos=int(y.sum()),
        n_neg=int((~y).sum()),
    )


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) step points, used for plotting."""
    s, y = _as_arrays(scores, labels)
    _both_classes(y)
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tpr = np.r_[0.0, np.cumsum(y_sorted)[last] / y.sum()]
    fpr = np.r_[0.0, np.cumsum(~y_sorted)[last] / (~y).sum()]
    return fpr, tpr
