from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


def label_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(score+ > score-) + 0.5 P(tie) over all positive/negative pairs; NaN if a class is missing.

    Computed from mid-ranks, whose sum over the positives counts exactly the
    pairwise wins plus half the ties.
    """
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    wins = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(wins / (n_pos * n_neg))


def macro_auc(scores: np.ndarray, labels: np.ndarray) -> tuple[float, list[float | None]]:
    """Mean per-label AUC over labels that have both classes.

    Returns ``(macro, per_label)``; labels lacking a positive or a negative are
    reported as ``None`` and left out of the mean.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    if scores.shape[0] < 1:
        raise ValueError("macro_auc needs at least one sample")
    per_label: list[float | None] = []
    for j in range(scores.shape[1]):
        auc = label_auc(scores[:, j], labels[:, j])
        per_label.append(None if math.isnan(auc) else auc)
    defined = [a for a in per_label if a is not None]
    if not defined:
        raise ValueError("no label has both a positive and a negative sample")
    return float(np.mean(defined)), per_label


def excluded_labels(per_label: list[float | None]) -> list[int]:
    return [i for i, a in enumerate(per_label) if a is None]
