"""Threshold-free detection metrics over anomaly scores (higher = more anomalous)."""

from __future__ import annotations

import numpy as np


def _check(scores, labels, both: bool = True) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not y.any():
        raise ValueError("no positive samples")
    if both and y.all():
        raise ValueError("both classes must be present")
    return s, y


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count one half."""
    s, y = _check(scores, labels)
    pos, neg = s[y], np.sort(s[~y])
    below = np.searchsorted(neg, pos, side="left")
    tied = np.searchsorted(neg, pos, side="right") - below
    return float((below.sum() + 0.5 * tied.sum()) / (len(pos) * len(neg)))


def _ranked(s: np.ndarray, y: np.ndarray):
    """Cumulative TP/FP at each distinct threshold, descending score."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return tp, fp


def average_precision(scores, labels) -> float:
    """Mean precision at the rank of each positive; tied scores keep input order."""
    s, y = _check(scores, labels, both=False)
    y = y[np.argsort(-s, kind="stable")]
    rank = np.flatnonzero(y) + 1
    return float(np.mean(np.arange(1, len(rank) + 1) / rank))


def f1_max(scores, labels) -> float:
    """Best F1 over all thresholds of the form ``score >= t``."""
    s, y = _check(scores, labels, both=False)
    tp, fp = _ranked(s, y)
    fn = y.sum() - tp
    return float(np.max(2 * tp / (2 * tp + fp + fn)))
