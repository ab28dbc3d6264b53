"""Accuracy and AUC.

AUC is the Mann-Whitney rank statistic: ties get the mean rank of their tied
block, so a tied positive/negative pair counts one half. Multi-class scores
are reduced by macro-averaging one-vs-rest AUCs over the classes present in
the labels (micro averaging is available behind a flag).
"""

from __future__ import annotations

import numpy as np

from .errors import MetricUndefinedError


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise MetricUndefinedError(f"preds shape {preds.shape} != labels "
                                   f"shape {labels.shape}")
    return float((preds == labels).mean())


def _midranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n; tied values share the mean rank of their block."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) via the rank-sum identity."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs at least one positive and one negative")
    ranks = _midranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(scores, labels, average: str = "macro") -> float:
    """AUC of class scores against integer labels.

    1-D scores are the positive-class score for binary labels; 2-D (n, C)
    scores are macro-averaged one-vs-rest over the classes present (or
    pooled into one binary problem with ``average="micro"``).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise MetricUndefinedError("AUC undefined on single-class labels")
    if scores.ndim == 1:
        return binary_auc(scores, labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise MetricUndefinedError(f"scores shape {scores.shape} does not match "
                                   f"{labels.shape[0]} labels")
    present = np.unique(labels)
    if average == "micro":
        flat_scores = np.concatenate([scores[:, c] for c in present])
        flat_labels = np.concatenate([(labels == c).astype(int) for c in present])
        return binary_auc(flat_scores, flat_labels)
    if average != "macro":
        raise MetricUndefinedError(f"unknown AUC average {average!r}")
    per_class = [binary_auc(scores[:, c], (labels == c).astype(int)) for c in present]
    return float(np.mean(per_class))
