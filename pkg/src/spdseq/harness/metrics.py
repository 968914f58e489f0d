"""Confusion matrices, per-class F1 and macro F1 (MF1)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..signals.recording import STAGES


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, int), np.asarray(y_pred, int)), 1)
    return cm


def f1_from_confusion(cm) -> np.ndarray:
    """Per-class F1 ``2TP / (2TP + FP + FN)``; 0 when the class is absent from truth and predictions."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * tp / denom, 0.0)


@dataclass
class MetricsReport:
    """Scores are fractions in [0, 1]; :meth:`percent` gives the tabulated form."""

    confusion: np.ndarray
    per_class_f1: np.ndarray
    mf1: float
    accuracy: float

    @classmethod
    def from_confusion(cls, cm) -> "MetricsReport":
        cm = np.asarray(cm, dtype=np.int64)
        f1 = f1_from_confusion(cm)
        total = cm.sum()
        acc = float(np.trace(cm) / total) if total else 0.0
        return cls(cm, f1, float(f1.mean()), acc)

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int) -> "MetricsReport":
        return cls.from_confusion(confusion_matrix(y_true, y_pred, n_classes))

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def percent(self) -> dict:
        out = {"MF1": 100 * self.mf1, "accuracy": 100 * self.accuracy}
        for c, f in enumerate(self.per_class_f1):
            out[f"{class_name(c)} F1"] = 100 * float(f)
        return out

    def to_dict(self) -> dict:
        return {
            "mf1": self.mf1,
            "accuracy": self.accuracy,
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls.from_confusion(np.array(d["confusion"]))

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [class_name(c) for c in range(self.n_classes)]
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, self.confusion):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()


def class_name(c: int) -> str:
    return STAGES[c] if c < len(STAGES) else f"class{c}"


def aggregate(reports) -> dict:
    """Mean and sample standard deviation (n-1; 0 for a single fold) of every percent metric."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    keys = reports[0].percent().keys()
    out = {}
    for key in keys:
        vals = np.array([r.percent()[key] for r in reports])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[key] = (float(vals.mean()), std)
    return out


def format_table(rows: dict, columns=("MF1", "N3 F1", "N2 F1", "N1 F1")) -> str:
    """Markdown table of ``mean ± std`` cells; ``rows`` maps a label to an :func:`aggregate` result."""
    lines = ["| Configuration | " + " | ".join(columns) + " |",
             "|" + "---|" * (len(columns) + 1)]
    for label, agg in rows.items():
        cells = []
        for col in columns:
            if col in agg:
                m, s = agg[col]
                cells.append(f"{m:.2f} ± {s:.2f}")
            else:
                cells.append("n/a")
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines)
