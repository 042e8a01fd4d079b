import json

import numpy as np
import pytest

from gdce.errors import DataError
from gdce.metrics import (
    accuracy,
    argmax_predictions,
    binary_auc,
    classification_report,
    confusion_matrix,
    confusion_percentages,
    multiclass_auc,
    per_class_accuracy,
    precision_recall,
    softmax_scores,
    worst_group_accuracy,
)


def _pairwise_auc(labels, scores):
    # exhaustive comparison oracle: every positive against every negative
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_confusion_matrix_hand_example():
    cm = confusion_matrix([0, 0, 1, 1, 2], [0, 1, 1, 1, 0], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 0]]
    pct = confusion_percentages(cm)
    assert pct[0].tolist() == [50.0, 50.0, 0.0]
    assert pct[2].tolist() == [100.0, 0.0, 0.0]


def test_confusion_percentages_empty_row_stays_zero():
    cm = np.array([[2, 0], [0, 0]])
    assert confusion_percentages(cm)[1].tolist() == [0.0, 0.0]


def test_confusion_matrix_validation():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion_matrix([0, 2], [0, 0], 2)
    with pytest.raises(DataError):
        confusion_matrix([], [], 2)


def test_accuracy_and_worst_group():
    y = [0, 0, 1, 1, 1, 2]
    p = [0, 1, 1, 1, 0, 2]
    assert accuracy(y, p) == pytest.approx(4 / 6)
    assert worst_group_accuracy(y, p, 3) == pytest.approx(0.5)  # class 0
    # absent classes do not drag the minimum to zero
    assert worst_group_accuracy([1, 1], [1, 1], 3) == 1.0


def test_per_class_accuracy_flags_absent_classes():
    cm = confusion_matrix([0, 0, 2], [0, 2, 2], 3)
    acc = per_class_accuracy(cm)
    assert acc[0] == 0.5 and acc[1] is None and acc[2] == 1.0


def test_argmax_ties_resolve_to_lowest_index():
    scores = np.array([[0.5, 0.5, 0.1], [0.1, 0.7, 0.7]])
    assert argmax_predictions(scores).tolist() == [0, 1]


def test_precision_recall_undefined_flags():
    cm = confusion_matrix([0, 0, 1], [0, 0, 0], 3)
    pr0 = precision_recall(cm, 0)
    assert pr0.precision == pytest.approx(2 / 3) and pr0.precision_defined
    assert pr0.recall == 1.0 and pr0.recall_defined
    pr1 = precision_recall(cm, 1)  # never predicted
    assert not pr1.precision_defined and pr1.recall_defined and pr1.recall == 0.0
    pr2 = precision_recall(cm, 2)  # never occurs
    assert not pr2.recall_defined and not pr2.precision_defined


def test_auc_hand_cases():
    assert binary_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert binary_auc([1, 1, 0, 0], [0.1, 0.2, 0.8, 0.9]) == 0.0
    assert binary_auc([0, 1], [0.5, 0.5]) == 0.5  # tie counts half
    assert binary_auc([0, 1, 0, 1], [0.1, 0.4, 0.4, 0.9]) == pytest.approx(0.875)


def test_auc_matches_exhaustive_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 30))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n)  # heavy ties
        assert binary_auc(labels, scores) == pytest.approx(
            _pairwise_auc(labels, scores), abs=1e-12)


def test_auc_needs_both_classes():
    with pytest.raises(DataError):
        binary_auc([1, 1], [0.1, 0.2])
    with pytest.raises(DataError):
        binary_auc([0, 0], [0.1, 0.2])


def test_multiclass_auc_skips_absent_classes_with_warning():
    y = [0, 0, 1, 1]
    scores = np.array([[0.9, 0.1, 0.0], [0.8, 0.2, 0.0],
                       [0.2, 0.8, 0.0], [0.1, 0.9, 0.0]])
    with pytest.warns(UserWarning, match="class 2"):
        macro, per_class = multiclass_auc(y, scores)
    assert per_class[2] is None
    assert macro == pytest.approx((per_class[0] + per_class[1]) / 2)
    with pytest.raises(DataError), pytest.warns(UserWarning):
        multiclass_auc([0, 0], np.zeros((2, 1)))


def test_softmax_scores_rows_sum_to_one():
    z = np.array([[1000.0, 0.0], [-5.0, 5.0]])
    s = softmax_scores(z)
    assert np.allclose(s.sum(axis=1), 1.0)
    assert np.isfinite(s).all()


def test_classification_report_is_internally_consistent():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 3, size=60)
    logits = rng.standard_normal((60, 3)) + np.eye(3)[y] * 2.0
    rep = classification_report(y, logits, ["A", "B", "C"])
    assert rep.num_samples == 60
    assert rep.accuracy == pytest.approx(np.trace(rep.confusion) / 60)
    present = [a for a in rep.per_class_accuracy if a is not None]
    assert rep.worst_group == min(present)
    doc = json.loads(json.dumps(rep.to_dict()))  # JSON-safe
    assert doc["class_names"] == ["A", "B", "C"]
    text = rep.render()
    for name in ("A", "B", "C", "worst group", "confusion"):
        assert name in text
