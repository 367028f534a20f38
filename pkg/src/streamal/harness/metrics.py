"""Evaluation metrics: calibration error, ROC area, precision and query success."""

import numpy as np
from scipy.stats import rankdata

# the predicate used by query_success_rate, copied verbatim into every run report
QUERY_PREDICATE = ("a decision is correct when the learner queried exactly when its prediction "
                   "before the query was wrong (or no trained head existed)")


def ece(probs, correct, bins=15):
    """Expected calibration error over equal-width bins of the winner's probability."""
    probs = np.asarray(probs, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if probs.size == 0 or probs.shape != correct.shape:
        raise ValueError("need matching, nonempty probability and correctness arrays")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if probs.min() < 0 or probs.max() > 1:
        raise ValueError("probabilities outside [0, 1]")
    idx = np.minimum((probs * bins).astype(int), bins - 1)
    total = 0.0
    for b in np.unique(idx):
        mask = idx == b
        total += mask.sum() * abs(correct[mask].mean() - probs[mask].mean())
    return float(total / probs.size)


def auc(scores, labels):
    """Mann-Whitney U divided by ``n_pos * n_neg``; tied pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_precision(pred, truth, classes):
    """Mean over ``classes`` of TP / (TP + FP); a class never predicted scores 0."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    values = []
    for c in classes:
        hits = pred == c
        values.append(float(np.mean(truth[hits] == c)) if hits.any() else 0.0)
    return float(np.mean(values)) if values else 0.0


def needs_query(predicted, truth):
    return predicted is None or predicted < 0 or predicted != truth


def query_success_rate(events):
    """Fraction of correct query decisions; ``events`` are ``(queried, predicted, truth)``.

    ``predicted`` is ``None`` (or negative) when no trained head existed.
    An empty log scores 1.0.
    """
    events = list(events)
    if not events:
        return 1.0
    good = sum(bool(q) == needs_query(p, t) for q, p, t in events)
    return good / len(events)


__all__ = ["ece", "auc", "macro_precision", "query_success_rate", "needs_query", "QUERY_PREDICATE"]
