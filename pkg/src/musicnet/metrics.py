"""Classification metrics: rank AUROC, step-integrated AUPRC, macro P/R/F1."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


def auroc(labels, scores) -> float:
    """Binary AUROC as the Mann-Whitney statistic with tied ranks averaged.

    Returns ``nan`` when only one class is present.
    """
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(labels, scores) -> float:
    """Average precision: sum over distinct thresholds of
    (recall increase) x (precision at that threshold)."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        return math.nan
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    precision = tp[ends] / (tp[ends] + fp[ends])
    recall = tp[ends] / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def confusion(labels, pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm


def macro_prf(labels, pred, n_classes: int) -> tuple[float, float, float]:
    """Macro-averaged precision, recall and F1; empty denominators count 0."""
    cm = confusion(labels, pred, n_classes).astype(np.float64)
    tp = np.diag(cm)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    p = np.divide(tp, pred_tot, out=np.zeros(n_classes), where=pred_tot > 0)
    r = np.divide(tp, true_tot, out=np.zeros(n_classes), where=true_tot > 0)
    f = np.divide(2 * p * r, p + r, out=np.zeros(n_classes), where=(p + r) > 0)
    return float(p.mean()), float(r.mean()), float(f.mean())


def classification_report(labels, probs) -> dict[str, float]:
    """All metrics from class probabilities (N x C).

    Binary problems score class 1; with more classes AUROC and AUPRC are
    macro one-vs-rest averages over classes present in ``labels``.
    """
    y = np.asarray(labels, dtype=np.int64)
    P = np.asarray(probs, dtype=np.float64)
    C = P.shape[1]
    pred = P.argmax(axis=1)
    if C == 2:
        roc = auroc(y == 1, P[:, 1])
        prc = auprc(y == 1, P[:, 1])
    else:
        rocs = [auroc(y == c, P[:, c]) for c in range(C)]
        prcs = [auprc(y == c, P[:, c]) for c in range(C)]
        rocs = [v for v in rocs if not math.isnan(v)]
        prcs = [v for v in prcs if not math.isnan(v)]
        roc = float(np.mean(rocs)) if rocs else math.nan
        prc = float(np.mean(prcs)) if prcs else math.nan
    p, r, f = macro_prf(y, pred, C)
    return {
        "auroc": roc,
        "auprc": prc,
        "accuracy": float((pred == y).mean()),
        "precision": p,
        "recall": r,
        "f1": f,
    }
