"""Per-epoch classification metrics for an alarm-style detector.

All functions take raw scores (higher means "more likely positive") and 0/1
labels.  Thresholding always treats ``score >= cut`` as a positive call.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _check(scores, labels, need_both: bool = True, need_pos: bool = True):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    if need_both and (n_pos == 0 or n_pos == y.size):
        raise ValueError("metric needs at least one positive and one negative")
    if need_pos and n_pos == 0:
        raise ValueError("metric needs at least one positive")
    return s, y


def _cuts(s: np.ndarray, y: np.ndarray):
    """Cumulative (tp, fp) when calling positive everything >= each distinct
    score, distinct scores visited in descending order."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s.size - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    return s_sorted[last], tp, fp


def au_roc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count ½)."""
    s, y = _check(scores, labels)
    ranks = rankdata(s)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) points from (0, 0) to (1, 1), one per distinct score."""
    s, y = _check(scores, labels)
    _, tp, fp = _cuts(s, y)
    n_pos = y.sum()
    n_neg = y.size - n_pos
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos]


def au_roc_trapezoid(scores, labels) -> float:
    fpr, tpr = roc_curve(scores, labels)
    return float(np.trapezoid(tpr, fpr))


def au_pr(scores, labels) -> float:
    """Step-wise area under the precision-recall curve (average precision)."""
    s, y = _check(scores, labels, need_both=False)
    _, tp, fp = _cuts(s, y)
    recall = tp / y.sum()
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def best_f1(scores, labels) -> tuple[float, float]:
    """Best F1 over thresholds placed at midpoints between distinct scores.

    Candidates run from one unit below the minimum (everything positive) to
    one unit above the maximum (nothing positive); ties keep the lowest
    threshold.  Returns ``(f1, threshold)``.
    """
    s, y = _check(scores, labels, need_both=False)
    levels, tp, fp = _cuts(s, y)
    # ascending threshold order: all-positive first, nothing-positive last
    tp = np.r_[tp[::-1], 0]
    fp = np.r_[fp[::-1], 0]
    up = levels[::-1]
    thresholds = np.r_[up[0] - 1.0, (up[:-1] + up[1:]) / 2.0, up[-1] + 1.0]
    n_pos = y.sum()
    f1 = 2.0 * tp / (2.0 * tp + fp + (n_pos - tp))
    best = int(np.argmax(f1))
    return float(f1[best]), float(thresholds[best])


def sensitivity_at_specificity(scores, labels, target: float) -> float:
    """Highest sensitivity among thresholds whose specificity is at least ``target``."""
    sens, _ = _sens_at_spec(scores, labels, target)
    return sens


def _sens_at_spec(scores, labels, target):
    s, y = _check(scores, labels)
    levels, tp, fp = _cuts(s, y)
    n_pos = y.sum()
    n_neg = y.size - n_pos
    spec = np.r_[1.0, (n_neg - fp) / n_neg]
    sens = np.r_[0.0, tp / n_pos]
    cut = np.r_[np.inf, levels]
    ok = np.flatnonzero(spec >= target)
    best = ok[np.argmax(sens[ok])]
    return float(sens[best]), float(cut[best])


def metric_report(scores, labels) -> dict:
    """The five alarm metrics plus the thresholds behind them.

    ROC and PR metrics need both classes and F1 needs a positive; anything
    undefined for the given labels is reported as ``None``.
    """
    y = np.asarray(labels).reshape(-1)
    n_pos = int(np.sum(y == 1))
    both = 0 < n_pos < y.size
    out = {"auroc": None, "aupr": None, "f1": None, "sens_at_97": None, "sens_at_99": None}
    diag = {"n": int(y.size), "n_pos": n_pos}
    if n_pos:
        out["f1"], diag["f1_threshold"] = best_f1(scores, labels)
    if both:
        out["auroc"] = au_roc(scores, labels)
        out["aupr"] = au_pr(scores, labels)
        for target, key in ((0.97, "sens_at_97"), (0.99, "sens_at_99")):
            out[key], cut = _sens_at_spec(scores, labels, target)
            diag[f"{key}_threshold"] = None if np.isinf(cut) else cut
    return {**out, "diagnostics": diag}
