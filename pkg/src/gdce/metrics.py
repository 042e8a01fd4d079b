"""Evaluation metrics: confusion matrices, worst-group accuracy, rank AUC.

AUC is the Mann-Whitney statistic computed from midranks, so ties contribute
half a concordance each; the multiclass form is the macro average of
one-vs-rest AUCs, skipping (with a warning) any class the evaluation set does
not contain on both sides. Worst-group accuracy is the minimum per-class
accuracy over the classes that actually appear.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError


def argmax_predictions(scores: np.ndarray) -> np.ndarray:
    """Row argmax; ties resolve to the lowest class index."""
    return np.asarray(scores).argmax(axis=1)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"label arrays must be 1-D and equal length: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise DataError("no samples to evaluate")
    bad = (t < 0) | (t >= num_classes) | (p < 0) | (p >= num_classes)
    if bad.any():
        raise ValueError(f"label outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def confusion_percentages(cm: np.ndarray) -> np.ndarray:
    """Row-normalized confusion, in percent; empty rows stay all-zero."""
    cm = np.asarray(cm, dtype=np.float64)
    totals = cm.sum(axis=1, keepdims=True)
    out = np.divide(cm * 100.0, totals, out=np.zeros_like(cm), where=totals > 0)
    return out


def accuracy(y_true, y_pred) -> float:
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.size == 0:
        raise DataError("no samples to evaluate")
    return float((t == p).mean())


def per_class_accuracy(cm: np.ndarray) -> list[Optional[float]]:
    """Diagonal over row sums; None for classes with no samples."""
    out = []
    for i in range(cm.shape[0]):
        total = int(cm[i].sum())
        out.append(float(cm[i, i] / total) if total else None)
    return out


def worst_group_accuracy(y_true, y_pred, num_classes: int) -> float:
    cm = confusion_matrix(y_true, y_pred, num_classes)
    present = [a for a in per_class_accuracy(cm) if a is not None]
    return min(present)


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    precision_defined: bool  # false when the class was never predicted
    recall_defined: bool  # false when the class has no true samples


def precision_recall(cm: np.ndarray, cls: int) -> PrecisionRecall:
    tp = float(cm[cls, cls])
    pred = float(cm[:, cls].sum())
    true = float(cm[cls, :].sum())
    return PrecisionRecall(
        precision=tp / pred if pred else 0.0,
        recall=tp / true if true else 0.0,
        precision_defined=pred > 0,
        recall_defined=true > 0,
    )


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    s = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and s[j + 1] == s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # ties share the midrank
        i = j + 1
    return ranks


def binary_auc(labels, scores) -> float:
    """Rank AUC: P(score_pos > score_neg) + 0.5 P(equal), via midranks."""
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be equal-length 1-D arrays")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = _midranks(s)
    r_pos = ranks[y].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def multiclass_auc(y_true, class_scores) -> tuple[float, list[Optional[float]]]:
    """Macro average of one-vs-rest AUCs over the representable classes.

    class_scores: (M, C). A class missing positives or negatives is skipped
    with a warning and reported as None in the per-class list.
    """
    y = np.asarray(y_true, dtype=np.int64)
    s = np.asarray(class_scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != y.size:
        raise ValueError(f"class_scores must be (M, C), got {s.shape}")
    per_class: list[Optional[float]] = []
    for c in range(s.shape[1]):
        pos = y == c
        if not pos.any() or pos.all():
            warnings.warn(f"class {c} has no positives or no negatives; AUC skipped")
            per_class.append(None)
            continue
        per_class.append(binary_auc(pos, s[:, c]))
    usable = [a for a in per_class if a is not None]
    if not usable:
        raise DataError("no class is scoreable for AUC")
    return float(np.mean(usable)), per_class


def softmax_scores(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MetricsReport:
    class_names: list[str]
    num_samples: int
    accuracy: float
    worst_group: float
    per_class_accuracy: list[Optional[float]]
    confusion: np.ndarray
    confusion_percent: np.ndarray
    macro_auc: Optional[float]
    per_class_auc: list[Optional[float]]
    precision_recall: list[PrecisionRecall]

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "num_samples": self.num_samples,
            "accuracy": self.accuracy,
            "worst_group": self.worst_group,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion.tolist(),
            "confusion_percent": self.confusion_percent.tolist(),
            "macro_auc": self.macro_auc,
            "per_class_auc": self.per_class_auc,
            "precision_recall": [
                {"precision": pr.precision, "recall": pr.recall,
                 "precision_defined": pr.precision_defined,
                 "recall_defined": pr.recall_defined}
                for pr in self.precision_recall
            ],
        }

    def render(self) -> str:
        names = self.class_names
        width = max(6, max(len(n) for n in names) + 1)
        lines = [
            f"samples: {self.num_samples}",
            f"accuracy: {self.accuracy:.4f}   worst group: {self.worst_group:.4f}"
            + (f"   macro AUC: {self.macro_auc:.4f}" if self.macro_auc is not None else ""),
            "",
            "confusion (rows = true, % of row):",
            " " * width + "".join(f"{n:>{width}}" for n in names),
        ]
        for i, n in enumerate(names):
            row = "".join(f"{v:>{width}.1f}" for v in self.confusion_percent[i])
            lines.append(f"{n:<{width}}" + row)
        lines.append("")
        lines.append(f"{'class':<{width}}{'acc':>8}{'prec':>8}{'rec':>8}{'auc':>8}")
        for i, n in enumerate(names):
            acc = self.per_class_accuracy[i]
            pr = self.precision_recall[i]
            auc = self.per_class_auc[i]
            lines.append(
                f"{n:<{width}}"
                + (f"{acc:>8.4f}" if acc is not None else f"{'-':>8}")
                + (f"{pr.precision:>8.4f}" if pr.precision_defined else f"{'-':>8}")
                + (f"{pr.recall:>8.4f}" if pr.recall_defined else f"{'-':>8}")
                + (f"{auc:>8.4f}" if auc is not None else f"{'-':>8}")
            )
        return "\n".join(lines) + "\n"


def classification_report(y_true, logits, class_names: list[str]) -> MetricsReport:
    """Everything derivable from one pass of logits over a labeled set."""
    y = np.asarray(y_true, dtype=np.int64)
    num_classes = len(class_names)
    preds = argmax_predictions(logits)
    cm = confusion_matrix(y, preds, num_classes)
    scores = softmax_scores(logits)
    try:
        macro, per_cls_auc = multiclass_auc(y, scores)
    except DataError:
        macro, per_cls_auc = None, [None] * num_classes
    per_acc = per_class_accuracy(cm)
    return MetricsReport(
        class_names=list(class_names),
        num_samples=int(y.size),
        accuracy=accuracy(y, preds),
        worst_group=min(a for a in per_acc if a is not None),
        per_class_accuracy=per_acc,
        confusion=cm,
        confusion_percent=confusion_percentages(cm),
        macro_auc=macro,
        per_class_auc=per_cls_auc,
        precision_recall=[precision_recall(cm, c) for c in range(num_classes)],
    )
