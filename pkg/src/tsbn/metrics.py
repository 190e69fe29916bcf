"""Diagnostic metrics: confusion counts, accuracy/sensitivity/specificity/YI/F1, ROC/AUC,
and cross-validation aggregation.

Undefined rates (zero denominators) are reported as ``None`` rather than 0.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInput, UndefinedMetric

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "youden", "f1", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass
class MetricsReport:
    accuracy: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    youden: Optional[float]
    f1: Optional[float]
    auc: Optional[float] = None
    roc: list[tuple[float, float]] = field(default_factory=list)
    counts: Optional[ConfusionCounts] = None
    threshold: float = 0.5
    scores: Optional[np.ndarray] = field(default=None, repr=False)
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    def scalars(self) -> dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        out = dict(self.scalars())
        out["threshold"] = self.threshold
        if self.counts is not None:
            out["counts"] = asdict(self.counts)
        return out


def _as_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise InvalidInput(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise InvalidInput("need at least one score")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInput("labels must be 0 or 1")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with the rule: predict positive iff ``score >= threshold``."""
    s, y = _as_scores_labels(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def compute_metrics(c: ConfusionCounts) -> MetricsReport:
    sens = _ratio(c.tp, c.tp + c.fn)
    spec = _ratio(c.tn, c.tn + c.fp)
    youden = sens + spec - 1.0 if sens is not None and spec is not None else None
    return MetricsReport(
        accuracy=_ratio(c.tp + c.tn, c.n),
        sensitivity=sens,
        specificity=spec,
        youden=youden,
        f1=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        counts=c,
    )


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) points from sweeping the threshold down through every distinct score."""
    s, y = _as_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("ROC needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    tps = np.cumsum(y_sorted)
    fps = np.cumsum(1 - y_sorted)
    # keep only the last index of each run of tied scores
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s.size - 1]
    points = [(0.0, 0.0)]
    points += [(fps[i] / n_neg, tps[i] / n_pos) for i in last]
    return [(float(f), float(t)) for f, t in points]


def auc_rank(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    s, y = _as_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def trapezoid_area(roc: Sequence[tuple[float, float]]) -> float:
    pts = np.asarray(roc, dtype=np.float64)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def roc_auc(scores, labels) -> tuple[list[tuple[float, float]], float]:
    return roc_curve(scores, labels), auc_rank(scores, labels)


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Full report for one set of predictions; AUC/ROC left undefined for one-class input."""
    s, y = _as_scores_labels(scores, labels)
    report = compute_metrics(confusion(s, y, threshold))
    report.threshold = threshold
    report.scores = s
    report.labels = y
    if 0 < y.sum() < y.size:
        report.roc, report.auc = roc_auc(s, y)
    return report


@dataclass
class CVReport:
    """Per-fold reports, their mean and sample standard deviation, and a pooled report
    computed from the concatenated fold predictions."""
    folds: list[MetricsReport]
    mean: dict[str, Optional[float]]
    std: dict[str, Optional[float]]
    pooled: Optional[MetricsReport] = None

    def to_dict(self) -> dict:
        return {
            "n_folds": len(self.folds),
            "mean": self.mean,
            "std": self.std,
            "folds": [r.to_dict() for r in self.folds],
            "pooled": self.pooled.to_dict() if self.pooled is not None else None,
        }


def aggregate_folds(reports: Sequence[MetricsReport]) -> CVReport:
    if len(reports) == 0:
        raise InvalidInput("no fold reports to aggregate")
    mean: dict[str, Optional[float]] = {}
    std: dict[str, Optional[float]] = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in reports]
        if any(v is None for v in values):
            mean[name] = std[name] = None
            continue
        arr = np.asarray(values, dtype=np.float64)
        mean[name] = float(arr.mean())
        std[name] = float(arr.std(ddof=1)) if arr.size > 1 else None

    pooled = None
    if all(r.scores is not None for r in reports):
        scores = np.concatenate([r.scores for r in reports])
        labels = np.concatenate([r.labels for r in reports])
        pooled = evaluate_scores(scores, labels, reports[0].threshold)
    return CVReport(list(reports), mean, std, pooled)


def roc_to_csv(roc: Sequence[tuple[float, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fpr", "tpr"])
    for fpr, tpr in roc:
        writer.writerow([repr(float(fpr)), repr(float(tpr))])
    return buf.getvalue()


def report_to_json(report: MetricsReport | CVReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
