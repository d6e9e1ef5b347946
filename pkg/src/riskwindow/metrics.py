"""Confusion-matrix metrics, AUC-PR and the accuracy/F1 harmonic mean."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionCounts":
        y = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        if y.shape != p.shape:
            raise MetricError(f"shape mismatch {y.shape} vs {p.shape}")
        return cls(
            tp=int(np.sum(y & p)),
            fp=int(np.sum(~y & p)),
            fn=int(np.sum(y & ~p)),
            tn=int(np.sum(~y & ~p)),
        )


def _ratio(num: float, den: float, name: str, flags: set[str]) -> float:
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


def f1_from(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def basic_metrics(c: ConfusionCounts, flags: set[str] | None = None) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1). Undefined ratios are 0 and named in ``flags``."""
    if c.total == 0:
        raise MetricError("all confusion counts are zero")
    flags = set() if flags is None else flags
    acc = (c.tp + c.tn) / c.total
    prec = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    rec = _ratio(c.tp, c.tp + c.fn, "recall", flags)
    if prec + rec == 0:
        flags.add("f1")
    return acc, prec, rec, f1_from(prec, rec)


def mcc(c: ConfusionCounts, flags: set[str] | None = None) -> float:
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if any(f == 0 for f in factors):
        if flags is not None:
            flags.add("mcc")
        return 0.0
    # integer numerator; the radicand is formed in floats to avoid overflow surprises
    num = c.tp * c.tn - c.fp * c.fn
    return num / math.sqrt(float(factors[0]) * factors[1] * factors[2] * factors[3])


def harmonic_mean(acc: float, f1: float) -> float:
    if acc + f1 == 0:
        return 0.0
    return 2.0 * acc * f1 / (acc + f1)


def pr_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Precision/recall at every distinct score threshold (predict positive if score >= thr),
    thresholds in decreasing order; tied scores enter together."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if y.all() or not y.any():
        raise MetricError("AUC-PR needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp, fp = tp[last], fp[last]
    return tp / (tp + fp), tp / y.sum()


def auc_pr(scores, labels) -> float:
    """Step-wise area: sum of (R_k - R_{k-1}) * P_k over decreasing thresholds."""
    precision, recall = pr_curve(scores, labels)
    dr = np.diff(np.r_[0.0, recall])
    # accumulate in threshold order (np.sum's pairwise order would differ in the last bits)
    return float(np.cumsum(dr * precision)[-1])


@dataclass
class MetricBundle:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    auc_pr: float
    hm: float
    counts: ConfusionCounts | None = None
    degenerate: frozenset[str] = field(default_factory=frozenset)

    CSV_FIELDS = ("tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1", "mcc", "auc_pr", "hm", "degenerate")

    def csv_row(self) -> list[str]:
        c = self.counts or ConfusionCounts(0, 0, 0, 0)
        vals = [c.tp, c.fp, c.fn, c.tn]
        vals += [repr(float(getattr(self, n))) for n in ("accuracy", "precision", "recall", "f1", "mcc", "auc_pr", "hm")]
        vals.append("|".join(sorted(self.degenerate)))
        return [str(v) for v in vals]

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("counts", "degenerate")}
        d["degenerate"] = sorted(self.degenerate)
        return d


def evaluate(y_true, y_pred, scores=None) -> MetricBundle:
    """All metrics for binary predictions; AUC-PR needs ``scores`` and both classes."""
    c = ConfusionCounts.from_labels(y_true, y_pred)
    flags: set[str] = set()
    acc, prec, rec, f1 = basic_metrics(c, flags)
    m = mcc(c, flags)
    ap = 0.0
    if scores is None:
        flags.add("auc_pr")
    else:
        try:
            ap = auc_pr(scores, y_true)
        except MetricError:
            flags.add("auc_pr")
    return MetricBundle(acc, prec, rec, f1, m, ap, harmonic_mean(acc, f1), c, frozenset(flags))


def hm_score(y_true, y_pred) -> float:
    """Harmonic mean of accuracy and F1 for boolean vectors (empty input -> 0)."""
    y = np.asarray(y_true, dtype=bool)
    if y.size == 0:
        return 0.0
    acc, _, _, f1 = basic_metrics(ConfusionCounts.from_labels(y, y_pred))
    return harmonic_mean(acc, f1)
