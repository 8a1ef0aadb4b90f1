"""Confusion matrices and precision / recall / F1 / accuracy reports.

All percentages are kept at full double precision; only the text table
rounds (to two decimals). Any 0/0 ratio is reported as 0.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # counts[true, predicted]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(y_true: Sequence, y_pred: Sequence, classes: Sequence[str] | None = None) -> ConfusionMatrix:
    """Tally (true, predicted) pairs.

    ``classes`` fixes the row/column order; labels outside it are appended in
    sorted order so nothing is silently dropped.
    """
    y_true = np.asarray(y_true, dtype=object)
    y_pred = np.asarray(y_pred, dtype=object)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"y_true has {len(y_true)} labels, y_pred has {len(y_pred)}")
    if len(y_true) == 0:
        raise LengthMismatch("cannot score an empty label list")
    order = list(classes or [])
    extra = set(y_true.tolist()) | set(y_pred.tolist())
    order += sorted((c for c in extra if c not in order), key=str)
    index = {c: i for i, c in enumerate(order)}
    t = np.fromiter((index[v] for v in y_true), dtype=np.int64, count=len(y_true))
    p = np.fromiter((index[v] for v in y_pred), dtype=np.int64, count=len(y_pred))
    k = len(order)
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(tuple(order), counts)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


@dataclass(frozen=True)
class ClassReport:
    classes: tuple[str, ...]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float

    @property
    def macro(self) -> dict[str, float]:
        return {"precision": float(self.precision.mean()), "recall": float(self.recall.mean()),
                "f1": float(self.f1.mean())}

    @property
    def weighted(self) -> dict[str, float]:
        w = self.support / self.support.sum() if self.support.sum() else np.zeros(len(self.support))
        return {"precision": float(w @ self.precision), "recall": float(w @ self.recall),
                "f1": float(w @ self.f1)}

    def row(self, cls: str) -> dict[str, float]:
        i = self.classes.index(cls)
        return {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                "f1": float(self.f1[i]), "support": float(self.support[i])}

    def to_dict(self) -> dict:
        return {
            "accuracy": float(self.accuracy),
            "per_class": {c: self.row(c) for c in self.classes},
            "macro_avg": self.macro,
            "weighted_avg": self.weighted,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self, title: str | None = None) -> str:
        width = max([len("Weighted Avg"), *(len(str(c)) for c in self.classes)])
        lines = [title] if title else []
        lines.append(f"{'':<{width}}  {'Precision':>9}  {'Recall':>9}  {'F1-score':>9}  {'Support':>9}")
        for c in self.classes:
            r = self.row(c)
            lines.append(f"{c:<{width}}  {r['precision']:9.2f}  {r['recall']:9.2f}  {r['f1']:9.2f}"
                         f"  {r['support']:9.0f}")
        lines.append(f"{'Accuracy':<{width}}  {self.accuracy:9.2f}")
        for name, avg in (("Macro Avg", self.macro), ("Weighted Avg", self.weighted)):
            lines.append(f"{name:<{width}}  {avg['precision']:9.2f}  {avg['recall']:9.2f}  {avg['f1']:9.2f}")
        return "\n".join(lines) + "\n"


def report(cm: ConfusionMatrix) -> ClassReport:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    precision = 100.0 * _ratio(tp, counts.sum(axis=0))
    recall = 100.0 * _ratio(tp, counts.sum(axis=1))
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    accuracy = 100.0 * float(tp.sum() / counts.sum())
    return ClassReport(cm.classes, precision, recall, f1, counts.sum(axis=1), accuracy)


def classification_report(y_true, y_pred, classes=None) -> ClassReport:
    return report(confusion(y_true, y_pred, classes))


def average_reports(reports: Sequence[ClassReport]) -> ClassReport:
    """Fold-average: each per-class figure is the mean over the folds that have the class."""
    order: list[str] = []
    for r in reports:
        order += [c for c in r.classes if c not in order]
    fields = {k: np.zeros(len(order)) for k in ("precision", "recall", "f1", "support")}
    seen = np.zeros(len(order))
    for r in reports:
        for i, c in enumerate(r.classes):
            j = order.index(c)
            seen[j] += 1
            for k, arr in fields.items():
                arr[j] += getattr(r, k)[i]
    for arr in fields.values():
        arr /= np.maximum(seen, 1)
    return ClassReport(tuple(order), fields["precision"], fields["recall"], fields["f1"],
                       fields["support"], float(np.mean([r.accuracy for r in reports])))
