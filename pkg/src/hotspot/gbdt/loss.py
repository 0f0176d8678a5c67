"""Softmax cross-entropy: probabilities, residuals, gradients and hessians."""
from __future__ import annotations

import numpy as np

EPS = 1e-15


def softmax_proba(scores) -> np.ndarray:
    """Row-wise softmax of raw scores, shifted by the row max for stability."""
    f = np.asarray(scores, dtype=np.float64)
    shifted = f - f.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot_labels(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    q = np.zeros((len(y), num_classes))
    q[np.arange(len(y)), y] = 1.0
    return q


def class_weights(y, positive_weight: float = 1.0, positive_class: int = 1) -> np.ndarray:
    """Per-sample weight: ``positive_weight`` for the positive class, 1 elsewhere."""
    y = np.asarray(y)
    return np.where(y == positive_class, float(positive_weight), 1.0)


def residuals(labels, probs, weights=None) -> np.ndarray:
    """q - P per sample and class, optionally scaled by per-sample weights.

    This is the negative gradient of the cross-entropy w.r.t. the raw scores.
    """
    r = np.asarray(labels, dtype=np.float64) - np.asarray(probs, dtype=np.float64)
    if weights is not None:
        r = r * np.asarray(weights, dtype=np.float64)[:, None]
    return r


def gradients_hessians(labels, probs, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient P - q and diagonal hessian P(1 - P), both weighted per sample."""
    p = np.asarray(probs, dtype=np.float64)
    g = p - np.asarray(labels, dtype=np.float64)
    h = p * (1.0 - p)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)[:, None]
        g = g * w
        h = h * w
    return g, h


def log_loss(labels, probs) -> float:
    """Mean multiclass cross-entropy."""
    q = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(probs, dtype=np.float64), EPS, 1.0)
    return float(-(q * np.log(p)).sum(axis=1).mean())


def sample_log_loss(labels, scores) -> np.ndarray:
    """Per-sample cross-entropy computed from raw scores via log-sum-exp."""
    f = np.asarray(scores, dtype=np.float64)
    m = f.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(f - m).sum(axis=1))
    return lse - (np.asarray(labels, dtype=np.float64) * f).sum(axis=1)
