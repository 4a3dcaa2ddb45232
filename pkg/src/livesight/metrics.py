"""Ranking and forecasting metrics: AUC, UAUC, GAUC, MSE, hit rate.

AUC uses the Mann-Whitney statistic with half credit for ties. The sort-based
implementation accumulates pair counts as exact integers, so it agrees with
all-pairs brute force to the last bit, not just to a tolerance.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, LabelError, UndefinedMetricError


def _validate_binary(labels):
    labels = np.asarray(labels)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise LabelError("labels must be 0 or 1")
    return labels.astype(np.int64)


def auc(scores, labels):
    """P(score of a positive > score of a negative) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _validate_binary(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(
            f"scores shape {scores.shape} and labels shape {labels.shape} must be equal 1-D"
        )
    n = scores.size
    pos = int(labels.sum())
    neg = n - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # Walk tie groups; each positive earns 2 units per negative strictly below
    # and 1 unit per tied negative. Integer arithmetic keeps this exact.
    units = 0
    neg_below = 0
    i = 0
    while i < n:
        j = i + 1
        while j < n and s[j] == s[i]:
            j += 1
        p_here = int(y[i:j].sum())
        n_here = (j - i) - p_here
        units += p_here * (2 * neg_below + n_here)
        neg_below += n_here
        i = j
    return units / (2.0 * pos * neg)


def _per_user(user_ids, scores, labels, weights=None):
    user_ids = np.asarray(user_ids)
    scores = np.asarray(scores, dtype=np.float64)
    labels = _validate_binary(labels)
    if not (user_ids.shape == scores.shape == labels.shape):
        raise DimensionError("user_ids, scores, labels must share one 1-D shape")
    if weights is None:
        weights = np.ones_like(scores)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != scores.shape:
            raise DimensionError("weights must match scores shape")
        if (weights <= 0).any():
            raise LabelError("exposure weights must be positive")
    eligible = []  # (auc, weight_sum)
    excluded = 0
    for uid in np.unique(user_ids):
        m = user_ids == uid
        ly = labels[m]
        if ly.min() == ly.max():
            excluded += 1
            continue
        eligible.append((auc(scores[m], ly), float(weights[m].sum())))
    return eligible, excluded


def uauc(user_ids, scores, labels):
    """Unweighted mean of per-user AUC over users having both classes."""
    eligible, _ = _per_user(user_ids, scores, labels)
    if not eligible:
        raise UndefinedMetricError("no user has both a positive and a negative")
    return float(np.mean([a for a, _ in eligible]))


def gauc(user_ids, scores, labels, weights=None):
    """Per-user AUC weighted by each user's summed exposure weight."""
    eligible, _ = _per_user(user_ids, scores, labels, weights)
    if not eligible:
        raise UndefinedMetricError("no user has both a positive and a negative")
    total = sum(w for _, w in eligible)
    return float(sum(a * w for a, w in eligible) / total)


def mse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def hit_rate(predictions, truths):
    """Fraction of positions where the predicted index equals the truth."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise DimensionError("predictions and truths must share one 1-D shape")
    if predictions.size == 0:
        raise UndefinedMetricError("hit rate of an empty prediction set")
    return float(np.mean(predictions == truths))
