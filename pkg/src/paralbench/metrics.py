"""WA, UA, WF1 and MAE over an integer confusion matrix.

Ratios of counts are evaluated as exact fractions and rounded to float once,
so the support-weighted WA sum and trace/N come out as the same double.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError


class MetricError(DataError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray   # (C, C) int64; rows true class, columns prediction

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise MetricError(f"confusion counts must be square, got shape {c.shape}")
        if (c < 0).any():
            raise MetricError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def C(self) -> int:
        return self.counts.shape[0]

    @property
    def support(self) -> np.ndarray:
        """N_c, the number of samples whose true class is c."""
        return self.counts.sum(axis=1)

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    def correct(self) -> int:
        return int(np.trace(self.counts))

    def _check(self):
        if self.N < 1:
            raise MetricError("metrics need at least one sample")

    def recall(self, c: int) -> Fraction | None:
        n = int(self.support[c])
        return Fraction(int(self.counts[c, c]), n) if n else None

    def precision(self, c: int) -> Fraction | None:
        n = int(self.counts[:, c].sum())
        return Fraction(int(self.counts[c, c]), n) if n else None

    def f1(self, c: int) -> Fraction:
        p, r = self.precision(c), self.recall(c)
        if not p or not r:
            return Fraction(0)
        return 2 * p * r / (p + r)


def confusion(y_true: Sequence[int], y_pred: Sequence[int], C: int) -> ConfusionMatrix:
    yt = np.asarray(y_true)
    yp = np.asarray(y_pred)
    if yt.shape != yp.shape or yt.ndim != 1:
        raise MetricError(f"y_true and y_pred must be equal-length 1-d, got {yt.shape} and {yp.shape}")
    if yt.size == 0:
        raise MetricError("confusion of empty inputs")
    if C < 1:
        raise MetricError("C must be >= 1")
    for name, y in (("y_true", yt), ("y_pred", yp)):
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise MetricError(f"{name} must hold class indices")
            y = y.astype(np.int64)
        if (y < 0).any() or (y >= C).any():
            raise MetricError(f"{name} has indices outside [0, {C})")
    counts = np.zeros((C, C), dtype=np.int64)
    np.add.at(counts, (yt.astype(np.int64), yp.astype(np.int64)), 1)
    return ConfusionMatrix(counts)


def wa(cm: ConfusionMatrix) -> float:
    """Support-weighted mean of per-class accuracy, which is overall accuracy."""
    cm._check()
    weighted = sum((int(n) * cm.recall(c) for c, n in enumerate(cm.support) if n), Fraction(0))
    value = weighted / cm.N
    assert value == Fraction(cm.correct(), cm.N)
    return float(value)


def ua_details(cm: ConfusionMatrix) -> tuple[float, int]:
    """(UA, number of classes left out because they have no test samples)."""
    cm._check()
    recalls = [cm.recall(c) for c in range(cm.C)]
    present = [r for r in recalls if r is not None]
    return float(sum(present, Fraction(0)) / len(present)), cm.C - len(present)


def ua(cm: ConfusionMatrix) -> float:
    return ua_details(cm)[0]


def wf1(cm: ConfusionMatrix) -> float:
    cm._check()
    total = sum((int(n) * cm.f1(c) for c, n in enumerate(cm.support) if n), Fraction(0))
    return float(total / cm.N)


def mae_metric(y_true, y_pred) -> float:
    yt = np.asarray(y_true, dtype=np.float64).ravel()
    yp = np.asarray(y_pred, dtype=np.float64).ravel()
    if yt.shape != yp.shape:
        raise MetricError(f"length mismatch: {yt.shape} vs {yp.shape}")
    if yt.size == 0:
        raise MetricError("MAE of empty inputs")
    if not (np.isfinite(yt).all() and np.isfinite(yp).all()):
        raise MetricError("MAE inputs must be finite")
    return float(np.abs(yt - yp).sum() / yt.size)


@dataclass
class MetricReport:
    task_id: str
    values: dict[str, float]
    support: int
    per_class: list[dict] = field(default_factory=list)
    excluded_classes: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "values": dict(self.values), "support": self.support,
                "per_class": self.per_class, "excluded_classes": self.excluded_classes,
                "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        return cls(d["task_id"], {k: float(v) for k, v in d["values"].items()}, int(d["support"]),
                   list(d.get("per_class") or []), int(d.get("excluded_classes", 0)), list(d.get("notes") or []))

    def table_style(self) -> dict[str, str]:
        return {k: table_format(v) for k, v in self.values.items()}


def table_format(value: float | None) -> str:
    """Three decimals with the leading zero dropped below 1 (".531", "1.862")."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "--"
    text = f"{value:.3f}"
    if text.startswith("0."):
        return text[1:]
    if text.startswith("-0."):
        return "-" + text[2:]
    return text


def classification_report(task_id: str, y_true, y_pred, class_names: Sequence[str],
                          metrics: Sequence[str] = ("WA", "UA", "WF1")) -> MetricReport:
    cm = confusion(y_true, y_pred, len(class_names))
    ua_value, excluded = ua_details(cm)
    values = {"WA": wa(cm), "UA": ua_value, "WF1": wf1(cm)}
    per_class = []
    for c, name in enumerate(class_names):
        p, r = cm.precision(c), cm.recall(c)
        per_class.append({"class": name, "support": int(cm.support[c]),
                          "precision": float(p) if p is not None else 0.0,
                          "recall": float(r) if r is not None else None,
                          "f1": float(cm.f1(c))})
    notes = []
    if excluded:
        notes.append(f"UA averages {cm.C - excluded} of {cm.C} classes; {excluded} have no test samples")
    return MetricReport(task_id, {m: values[m] for m in metrics}, cm.N, per_class, excluded, notes)


def regression_report(task_id: str, y_true, y_pred) -> MetricReport:
    return MetricReport(task_id, {"MAE": mae_metric(y_true, y_pred)}, len(np.asarray(y_true).ravel()))
