"""Confusion-matrix statistics, temporal IoU and ROC curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateLabelsError, SchemaError

Interval = tuple[float, float]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassificationReport:
    confusion: ConfusionMatrix
    f1: float
    recall: float
    fpr: float
    precision: float
    degenerate: bool  # some ratio had a zero denominator and was reported as 0

    def rows(self) -> list[tuple[str, float]]:
        c = self.confusion
        return [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn), ("precision", self.precision),
                ("recall", self.recall), ("f1", self.f1), ("fpr", self.fpr)]


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def report_from_counts(cm: ConfusionMatrix) -> ClassificationReport:
    fpr, d1 = _safe_div(cm.fp, cm.fp + cm.tn)
    recall, d2 = _safe_div(cm.tp, cm.tp + cm.fn)
    precision, d3 = _safe_div(cm.tp, cm.tp + cm.fp)
    f1, d4 = _safe_div(2 * precision * recall, precision + recall)
    return ClassificationReport(cm, f1, recall, fpr, precision, d1 or d2 or d3 or d4)


def classification_report(predictions: Sequence[bool], labels: Sequence[bool]) -> ClassificationReport:
    p = np.asarray(predictions, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    if p.shape != y.shape or p.ndim != 1:
        raise SchemaError(f"predictions {p.shape} and labels {y.shape} must be equal-length vectors")
    if len(p) == 0:
        raise SchemaError("classification_report needs at least one sample")
    cm = ConfusionMatrix(int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & ~y)), int(np.sum(~p & y)))
    return report_from_counts(cm)


# -- temporal IoU ---------------------------------------------------------

def _union(intervals: Iterable[Interval]) -> list[Interval]:
    merged: list[list[float]] = []
    for a, b in sorted(intervals):
        if a > b:
            raise ValueError(f"malformed interval ({a}, {b})")
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def _measure(intervals: Sequence[Interval]) -> float:
    return sum(b - a for a, b in intervals)


def _intersection(x: Sequence[Interval], y: Sequence[Interval]) -> float:
    i = j = 0
    total = 0.0
    while i < len(x) and j < len(y):
        lo, hi = max(x[i][0], y[j][0]), min(x[i][1], y[j][1])
        if hi > lo:
            total += hi - lo
        if x[i][1] < y[j][1]:
            i += 1
        else:
            j += 1
    return total


def _agent_overlap(det: Iterable[Interval], truth: Iterable[Interval]) -> tuple[float, float]:
    d, t = _union(det), _union(truth)
    inter = _intersection(d, t)
    return inter, _measure(d) + _measure(t) - inter


def temporal_iou(detected: Mapping[int, Iterable[Interval]], truth: Mapping[int, Iterable[Interval]],
                 aggregate: str = "micro") -> float:
    """Overlap of detected and true intervals, per agent, as intersection over union.

    ``micro`` pools interval measure over all agents; ``macro`` averages the
    per-agent ratios.  With nothing detected and nothing true the sets agree
    and the result is 1.
    """
    agents = sorted(set(detected) | set(truth))
    parts = [_agent_overlap(detected.get(a, ()), truth.get(a, ())) for a in agents]
    parts = [(i, u) for i, u in parts if u > 0]
    if not parts:
        return 1.0
    if aggregate == "micro":
        return sum(i for i, _ in parts) / sum(u for _, u in parts)
    if aggregate == "macro":
        return float(np.mean([i / u for i, u in parts]))
    raise ValueError(f"unknown aggregate {aggregate!r}")


def frame_intervals(spans: Iterable[tuple[int, int, int]]) -> dict[int, list[Interval]]:
    """(agent, first frame, last frame) triples as half-open [first, last + 1) intervals per agent."""
    out: dict[int, list[Interval]] = {}
    for agent, f0, f1 in spans:
        out.setdefault(agent, []).append((float(f0), float(f1 + 1)))
    return out


# -- ROC -----------------------------------------------------------------

@dataclass(frozen=True)
class RocCurve:
    thresholds: tuple[float, ...]  # descending; the first is +inf
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr, self.tpr))


def roc_points(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """Threshold sweep over the unique scores (predict positive when score >= threshold)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise SchemaError("scores and labels must be equal-length vectors")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]  # final index of each tied score group
    tps = np.cumsum(y)[last]
    fps = np.cumsum(~y)[last]
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(tuple(float(t) for t in thresholds), tuple(float(v) for v in fpr),
                    tuple(float(v) for v in tpr), auc)
