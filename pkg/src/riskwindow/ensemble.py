"""Confidence-weighted majority vote over tuned models and the ensemble threshold sweep."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .learners import Classifier
from .metrics import evaluate, hm_score

DEFAULT_GRID = tuple(round(0.05 + 0.01 * i, 2) for i in range(91))


class EnsembleError(ValueError):
    pass


@dataclass
class EnsembleMember:
    model: Classifier
    threshold: float
    weight: float  # mean positive-class probability on validation data
    name: str = ""
    columns: list[int] | None = None

    def proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.model.predict_proba(X if self.columns is None else X[:, self.columns])


def make_member(model: Classifier, threshold: float, X_val: np.ndarray, name: str = "", columns=None) -> EnsembleMember:
    m = EnsembleMember(model, float(threshold), 0.0, name or model.kind, columns)
    m.weight = float(np.mean(m.proba(X_val)))
    return m


def weighted_vote(votes: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """votes: (m, n) booleans. Positive where the weighted share of yes-votes is >= 0.5."""
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        raise EnsembleError("ensemble weights sum to zero")
    share = (w[:, None] * np.asarray(votes, dtype=float)).sum(axis=0) / w.sum()
    return share >= 0.5


def vote(members: Sequence[EnsembleMember], X: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Ensemble decision per row. Each member votes with its own threshold unless a
    common ``threshold`` overrides it."""
    if not members:
        raise EnsembleError("empty ensemble")
    votes = np.stack([m.proba(X) > (m.threshold if threshold is None else threshold) for m in members])
    return weighted_vote(votes, [m.weight for m in members])


def select_ensemble_threshold(
    members: Sequence[EnsembleMember],
    X_val: np.ndarray,
    labels_at: Callable[[float], np.ndarray],
    grid: Sequence[float] = DEFAULT_GRID,
) -> tuple[float, list[tuple[float, float]]]:
    """Sweep the grid: relabel validation windows at each tau, vote with every member cut
    at tau, score HM. Returns the best tau (smallest on ties) and the (tau, HM) table."""
    if len(grid) == 0:
        raise EnsembleError("empty threshold grid")
    probas = np.stack([m.proba(X_val) for m in members])
    w = [m.weight for m in members]
    rows = []
    for tau in grid:
        pred = weighted_vote(probas > tau, w)
        rows.append((float(tau), hm_score(labels_at(float(tau)), pred)))
    best = max(rows, key=lambda r: (r[1], -r[0]))
    return best[0], rows


def write_grid_csv(rows: Sequence[tuple[float, float]], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["tau_e", "hm"])
        for tau, hm in rows:
            w.writerow([repr(tau), repr(hm)])


def write_artifact(
    members: Sequence[EnsembleMember],
    tau_star: float,
    rows: Sequence[tuple[float, float]],
    path,
    model_paths: Sequence[str],
    extra: dict | None = None,
) -> None:
    d = {
        "members": [
            {"name": m.name, "kind": m.model.kind, "path": p, "threshold": m.threshold, "weight": m.weight,
             "columns": m.columns}
            for m, p in zip(members, model_paths)
        ],
        "tau_star": tau_star,
        "grid": [[t, h] for t, h in rows],
    }
    d.update(extra or {})
    Path(path).write_text(json.dumps(d, indent=1, sort_keys=True))


def evaluate_members(members, X, y_true, threshold: float | None = None):
    """MetricBundle of the ensemble vote against ``y_true``."""
    return evaluate(y_true, vote(members, X, threshold))
