"""Ranking and likelihood metrics."""

import numpy as np

from .errors import DataError

_CLAMP = 1e-7


def _split_scores(scores):
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"scores must be (prediction, label) pairs, got shape {arr.shape}")
    return arr[:, 0], arr[:, 1]


def auc(scores) -> float:
    """Probability a random positive outranks a random negative, ties at 1/2.

    Rank-sum formulation with average ranks for ties; O(m log m).
    """
    preds, labels = _split_scores(scores)
    pos = labels == 1
    m_pos = int(pos.sum())
    m_neg = len(labels) - m_pos
    if m_pos == 0 or m_neg == 0:
        raise DataError(f"AUC undefined: {m_pos} positives, {m_neg} negatives")
    _, inv, counts = np.unique(preds, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg_rank = ends - counts + (counts + 1) / 2.0   # 1-based average rank per value
    ranks = avg_rank[inv]
    pos_rank_sum = ranks[pos].sum()
    return float((pos_rank_sum - m_pos * (m_pos + 1) / 2.0) / (m_pos * m_neg))


def auc_pair_counting(scores) -> float:
    """O(m^2) oracle: count concordant pairs directly."""
    preds, labels = _split_scores(scores)
    p = preds[labels == 1]
    n = preds[labels != 1]
    if len(p) == 0 or len(n) == 0:
        raise DataError(f"AUC undefined: {len(p)} positives, {len(n)} negatives")
    diff = p[:, None] - n[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (len(p) * len(n)))


def log_loss(scores) -> float:
    """Mean binary cross-entropy with the training-side clamping."""
    preds, labels = _split_scores(scores)
    if len(preds) == 0:
        raise DataError("log_loss of an empty score list")
    p = np.clip(preds, _CLAMP, 1.0 - _CLAMP)
    return float(-(labels * np.log(p) + (1 - labels) * np.log(1 - p)).mean())
