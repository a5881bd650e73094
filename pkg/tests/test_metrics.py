"""AUC and GAUC against hand and brute-force oracles."""

import itertools

import numpy as np
import pytest

from fimrec.metrics import auc, gauc


def _pairwise_auc(scores, labels):
    positives = [s for s, y in zip(scores, labels) if y == 1]
    negatives = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for pos, neg in itertools.product(positives, negatives):
        total += 1.0 if pos > neg else 0.5 if pos == neg else 0.0
    return total / (len(positives) * len(negatives))


def test_auc_by_hand():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_perfect_separation():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_all_ties_give_one_half():
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_single_class_has_no_auc():
    assert auc([0.1, 0.2], [1, 1]) is None
    assert auc([0.1, 0.2], [0, 0]) is None


def test_auc_matches_the_pairwise_count():
    rng = np.random.default_rng(0)
    for _ in range(100):
        size = int(rng.integers(2, 201))
        # Coarse scores so ties are common.
        scores = rng.integers(0, 10, size) / 10
        labels = rng.integers(0, 2, size)
        if labels.min() == labels.max():
            continue
        assert auc(scores, labels) == pytest.approx(_pairwise_auc(scores, labels))


def test_auc_ignores_monotone_transforms():
    rng = np.random.default_rng(1)
    scores = rng.random(50)
    labels = rng.integers(0, 2, 50)
    assert auc(scores, labels) == auc(np.exp(3 * scores) - 7, labels)


def test_auc_rejects_bad_labels():
    with pytest.raises(ValueError, match="0 or 1"):
        auc([0.1, 0.2], [0, 2])
    with pytest.raises(ValueError, match="labels"):
        auc([0.1, 0.2], [0, 1, 1])


def test_gauc_of_a_single_user_is_its_auc():
    scores = [0.1, 0.4, 0.35, 0.8, 0.6]
    labels = [0, 0, 1, 1, 0]
    assert gauc(scores, labels, ["u1"] * 5) == auc(scores, labels)


def test_gauc_weights_users_by_sample_count():
    scores = [0.9, 0.1, 0.5, 0.5, 0.5, 0.5, 0.7]
    labels = [1, 0, 1, 0, 1, 0, 1]
    users = ["a", "a", "b", "b", "b", "b", "c"]
    assert gauc(scores, labels, users) == pytest.approx(2 / 3)


def test_gauc_ignores_user_order():
    scores = np.array([0.9, 0.1, 0.5, 0.2, 0.4, 0.6])
    labels = np.array([1, 0, 1, 0, 0, 1])
    users = np.array(["a", "a", "b", "b", "c", "c"])
    order = np.array([5, 2, 0, 4, 1, 3])
    expected = gauc(scores, labels, list(users))
    assert gauc(scores[order], labels[order], list(users[order])) == expected


def test_gauc_without_an_eligible_user():
    with pytest.raises(ValueError, match="no user"):
        gauc([0.1, 0.2], [1, 1], ["a", "b"])


def test_gauc_needs_one_user_per_score():
    with pytest.raises(ValueError, match="user ids"):
        gauc([0.1, 0.2], [0, 1], ["a"])


def test_auc_agrees_with_scikit_learn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(2)
    scores = rng.random(300)
    labels = rng.integers(0, 2, 300)
    assert auc(scores, labels) == pytest.approx(metrics.roc_auc_score(labels, scores))
