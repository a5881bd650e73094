"""AUC and user-weighted GAUC."""

from collections.abc import Sequence

import numpy as np
from scipy.stats import rankdata


def _labels(labels: Sequence[int] | np.ndarray, size: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (size,):
        raise ValueError(f"{labels.size} labels for {size} scores")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return labels.astype(bool)


def auc(
    scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> float | None:
    """Probability a positive outscores a negative, ties counting one half.

    ``None`` when the labels hold a single class.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    positive = _labels(labels, scores.shape[0])
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    wins = ranks[positive].sum() - n_pos * (n_pos + 1) / 2
    return float(wins / (n_pos * n_neg))


def gauc(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    user_ids: Sequence[str],
) -> float:
    """Per-user AUC averaged with sample-count weights.

    Users whose samples share one label are left out of both sums. Users are
    accumulated in sorted id order.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = _labels(labels, scores.shape[0]).astype(np.int64)
    if len(user_ids) != scores.shape[0]:
        raise ValueError(f"{len(user_ids)} user ids for {scores.shape[0]} scores")
    users, inverse = np.unique(np.asarray(list(user_ids)), return_inverse=True)
    per_user: list[tuple[float, int]] = []
    for index in range(len(users)):
        rows = inverse == index
        value = auc(scores[rows], labels[rows])
        if value is not None:
            per_user.append((value, int(rows.sum())))
    if not per_user:
        raise ValueError("no user has both positive and negative samples")
    if len(per_user) == 1:
        return per_user[0][0]
    total = sum(value * weight for value, weight in per_user)
    return total / sum(weight for _, weight in per_user)
