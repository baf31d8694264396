"""Scalar metrics used to score attacks and downstream tasks."""

import numpy as np

from ..exceptions import UndefinedMetricError, ValidationError


def f1_score(pred, truth, average="micro") -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValidationError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if average == "micro":
        # single-label multiclass: micro precision = micro recall = accuracy
        return float(np.mean(pred == truth)) if len(truth) else 0.0
    if average != "macro":
        raise ValidationError(f"average must be 'micro' or 'macro', got {average!r}")
    scores = []
    for c in np.union1d(pred, truth):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("pearson_r needs two 1-d vectors of equal length")
    if len(x) < 2:
        raise ValidationError("pearson_r needs at least two observations")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise UndefinedMetricError("correlation is undefined for zero-variance input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def average_precision(scores, labels) -> float:
    """Mean precision at the rank of each positive.

    Ranking is by descending score; equal scores keep their input order, so
    callers pass pairs sorted by id to get the ascending-id tie-break.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def average_precision_batch(scores, labels) -> np.ndarray:
    """Row-wise :func:`average_precision` for a [candidates, pairs] score matrix."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-scores, axis=1, kind="stable")
    hits = labels[order]
    cum = np.cumsum(hits, axis=1)
    ranks = np.arange(1, scores.shape[1] + 1)[None, :]
    return (np.where(hits, cum / ranks, 0.0)).sum(axis=1) / n_pos


def classification_margin(probs, true_class) -> float:
    """Probability of the true class minus the best competing class."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or len(probs) < 2:
        raise ValidationError("margin needs a probability vector over at least two classes")
    if np.any(probs < -1e-12) or abs(probs.sum() - 1.0) > 1e-6:
        raise ValidationError("probabilities must be non-negative and sum to 1")
    if not 0 <= true_class < len(probs):
        raise ValidationError(f"class {true_class} out of range")
    others = np.delete(probs, true_class)
    return float(probs[true_class] - others.max())


def margins_from_probs(probs, true_class) -> np.ndarray:
    """Vectorised margins for an [m, classes] probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    true = probs[:, true_class]
    rest = np.delete(probs, true_class, axis=1).max(axis=1)
    return true - rest
