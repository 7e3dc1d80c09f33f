"""Per-label precision/recall/F1, macro and micro averages, confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r else 0.0


@dataclass
class MetricsReport:
    labels: list[str]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    accuracy: float
    confusion: list[list[int]]  # rows gold, columns predicted

    def to_dict(self) -> dict:
        per_label = {
            lab: {"precision": p, "recall": r, "f1": f, "support": s}
            for lab, p, r, f, s in zip(self.labels, self.precision, self.recall, self.f1, self.support)
        }
        return {
            "per_label": per_label,
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "micro": {"precision": self.micro_precision, "recall": self.micro_recall, "f1": self.micro_f1},
            "accuracy": self.accuracy,
            "labels": self.labels,
            "confusion": self.confusion,
        }


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], n_labels: int) -> np.ndarray:
    cm = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def report_from_confusion(cm: np.ndarray, labels: Sequence[str] | None = None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    n = cm.shape[0]
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    prec = [_ratio(tp[i], tp[i] + fp[i]) for i in range(n)]
    rec = [_ratio(tp[i], tp[i] + fn[i]) for i in range(n)]
    f1 = [_f1(p, r) for p, r in zip(prec, rec)]
    micro_p = _ratio(tp.sum(), tp.sum() + fp.sum())
    micro_r = _ratio(tp.sum(), tp.sum() + fn.sum())
    return MetricsReport(
        labels=labels,
        precision=prec,
        recall=rec,
        f1=f1,
        support=[int(x) for x in cm.sum(axis=1)],
        macro_precision=float(np.mean(prec)) if n else 0.0,
        macro_recall=float(np.mean(rec)) if n else 0.0,
        macro_f1=float(np.mean(f1)) if n else 0.0,
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=_f1(micro_p, micro_r),
        accuracy=_ratio(tp.sum(), cm.sum()),
        confusion=cm.tolist(),
    )


def compute_metrics(
    gold: Sequence[int], pred: Sequence[int], n_labels: int, labels: Sequence[str] | None = None
) -> MetricsReport:
    return report_from_confusion(confusion_matrix(gold, pred, n_labels), labels)
