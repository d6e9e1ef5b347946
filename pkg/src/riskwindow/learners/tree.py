"""Histogram decision trees grown level by level.

One builder serves both the classification trees of the forest (impurity gain on
weighted class counts) and the second-order regression trees of gradient boosting
(regularised gain on gradient/hessian sums).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k

MAX_BINS = 32


@dataclass
class Binner:
    thresholds: list[np.ndarray]

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = MAX_BINS) -> "Binner":
        X = np.asarray(X, dtype=float)
        if not np.all(np.isfinite(X)):
            raise ValueError("tree learners need finite features; impute missing values first")
        thr = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            if len(u) <= max_bins:
                cuts = (u[:-1] + u[1:]) / 2.0
            else:
                q = np.quantile(X[:, j], np.linspace(0, 1, max_bins + 1)[1:-1])
                cuts = np.unique(q)
                # a cut equal to the maximum cannot separate anything
                cuts = cuts[cuts < u[-1]]
            thr.append(cuts.astype(float))
        return cls(thr)

    @property
    def n_bins(self) -> int:
        return max(len(t) for t in self.thresholds) + 1 if self.thresholds else 1

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape, dtype=np.int32)
        for j, t in enumerate(self.thresholds):
            # bin b holds t[b-1] < x <= t[b], so "bin <= b" is exactly "x <= t[b]"
            out[:, j] = np.searchsorted(t, X[:, j], side="left")
        return out


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int(np.sum(self.feature >= 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _k.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=float))]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


@dataclass
class GrowParams:
    kind: str  # "class" | "grad"
    max_depth: int
    min_samples_split: float = 2.0
    min_samples_leaf: float = 1.0
    criterion: str = "gini"
    features_per_node: int | None = None
    feature_mask: np.ndarray | None = None
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    gamma: float = 0.0
    min_child_weight: float = 1.0


def _node_value(stats: np.ndarray, gp: GrowParams) -> np.ndarray:
    if gp.kind == "class":
        return stats[:, 1] / np.maximum(stats[:, 0], 1e-300)
    g, a = stats[:, 1], gp.reg_alpha
    return -(np.sign(g) * np.maximum(np.abs(g) - a, 0.0)) / (stats[:, 2] + gp.reg_lambda)


def grow_tree(
    Xb: np.ndarray,
    row_stats: np.ndarray,
    thresholds: list[np.ndarray],
    gp: GrowParams,
    rng: np.random.Generator,
    importance: np.ndarray | None = None,
) -> Tree:
    """Grow one tree level by level.

    ``row_stats`` columns: classification -> (weight, weight*y); gradient ->
    (count, g, h). Rows with zero first column are ignored (out of bag / not sampled).
    """
    n_feat = Xb.shape[1]
    n_thr = np.array([len(t) for t in thresholds], dtype=np.int64)
    B = int(n_thr.max()) + 1 if n_feat else 1
    C = row_stats.shape[1]
    row_stats = np.ascontiguousarray(row_stats, dtype=float)
    pool = np.flatnonzero(gp.feature_mask) if gp.feature_mask is not None else np.arange(n_feat)
    per_node = gp.features_per_node if gp.features_per_node is not None else len(pool)
    per_node = min(per_node, len(pool))

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    rows = np.flatnonzero(row_stats[:, 0] > 0)
    local = np.zeros(len(rows), dtype=np.int64)
    frontier = [0]
    depth = 0
    while frontier and rows.size:
        m = len(frontier)
        node_stats = np.column_stack([np.bincount(local, weights=row_stats[rows, c], minlength=m) for c in range(C)])
        vals = _node_value(node_stats, gp)
        for i, nid in enumerate(frontier):
            value[nid] = float(vals[i])
        if depth >= gp.max_depth:
            break
        can = node_stats[:, 0] >= gp.min_samples_split
        if gp.kind == "class":
            p = node_stats[:, 1] / np.maximum(node_stats[:, 0], 1e-300)
            can &= (p > 0) & (p < 1)
        else:
            can &= node_stats[:, 2] >= 2 * gp.min_child_weight
        if not can.any():
            break
        keep = can[local]
        rows, local = rows[keep], local[keep]
        split_ids = np.flatnonzero(can)
        remap = np.full(m, -1, dtype=np.int64)
        remap[split_ids] = np.arange(len(split_ids))
        local = remap[local]
        k = len(split_ids)
        totals = np.ascontiguousarray(node_stats[split_ids])

        feat_ok = np.zeros((k, n_feat), dtype=np.bool_)
        if per_node < len(pool):
            picks = np.argsort(rng.random((k, len(pool))), axis=1)[:, :per_node]
            feat_ok[np.arange(k)[:, None], pool[picks]] = True
        else:
            feat_ok[:, pool] = True
        hist = _k.histograms(Xb, rows, local, row_stats, feat_ok, k, B)
        if gp.kind == "class":
            bf, bb, bg = _k.best_class_splits(
                hist, totals, n_thr, feat_ok, float(gp.min_samples_leaf), gp.criterion != "gini"
            )
            do = bg > 1e-12
        else:
            bf, bb, bg = _k.best_grad_splits(
                hist, totals, n_thr, feat_ok, float(gp.min_samples_leaf), float(gp.min_child_weight),
                float(gp.reg_lambda), float(gp.reg_alpha), float(gp.gamma),
            )
            do = bg > 0.0
        if not do.any():
            break

        child_of = np.full((k, 2), -1, dtype=np.int64)
        new_frontier = []
        for i in np.flatnonzero(do):
            nid = frontier[split_ids[i]]
            f, b = int(bf[i]), int(bb[i])
            feature[nid] = f
            threshold[nid] = float(thresholds[f][b])
            for side in (0, 1):
                child_of[i, side] = len(new_frontier)
                new_frontier.append(len(feature))
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            left[nid] = new_frontier[child_of[i, 0]]
            right[nid] = new_frontier[child_of[i, 1]]
            if importance is not None:
                importance[f] += float(bg[i])
        moving = do[local]
        rows, local = rows[moving], local[moving]
        go_left = Xb[rows, bf[local]] <= bb[local]
        local = np.where(go_left, child_of[local, 0], child_of[local, 1])
        frontier = new_frontier
        depth += 1

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
    )
