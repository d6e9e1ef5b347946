"""Bagged classification trees grown incrementally under out-of-bag monitoring."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .base import Classifier, check_xy
from .tree import Binner, GrowParams, Tree, grow_tree

logger = logging.getLogger(__name__)


@dataclass
class RFConfig:
    n_estimators: int = 100
    max_depth: int = 10
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: str | None = "sqrt"
    criterion: str = "gini"
    patience: int = 10


def _features_per_node(max_features: str | None, n_features: int) -> int:
    if max_features is None or max_features == "None":
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if max_features == "log2":
        return max(1, int(math.log2(n_features)))
    raise ValueError(f"unknown max_features {max_features!r}")


class RandomForest(Classifier):
    kind = "rf"

    def __init__(self, cfg: RFConfig | None = None, seed: int = 0):
        super().__init__(seed)
        self.cfg = cfg or RFConfig()
        self.trees: list[Tree] = []
        self.constant: float | None = None
        self.oob_errors: list[float] = []
        self._importance: np.ndarray | None = None

    def fit(self, X, y, X_val=None, y_val=None) -> "RandomForest":
        X, y = check_xy(X, y)
        cfg = self.cfg
        if cfg.criterion not in ("gini", "entropy", "log_loss"):
            raise ValueError(f"unknown criterion {cfg.criterion!r}")
        self.trees, self.oob_errors = [], []
        if y.all() or not y.any():
            logger.warning("random forest: single-class training data, fitting a constant model")
            self.constant = float(y[0])
            self._importance = np.zeros(X.shape[1])
            return self
        self.constant = None
        n, F = X.shape
        binner = Binner.fit(X)
        Xb = binner.transform(X)
        gp = GrowParams(
            kind="class",
            max_depth=cfg.max_depth,
            min_samples_split=cfg.min_samples_split,
            min_samples_leaf=cfg.min_samples_leaf,
            criterion="entropy" if cfg.criterion == "log_loss" else cfg.criterion,
            features_per_node=_features_per_node(cfg.max_features, F),
        )
        imp = np.zeros(F)
        yf = y.astype(float)
        oob_sum = np.zeros(n)
        oob_cnt = np.zeros(n)
        best, stale = math.inf, 0
        streams = np.random.SeedSequence(self.seed).spawn(cfg.n_estimators)
        for ss in streams:
            rng = np.random.default_rng(ss)
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
            tree = grow_tree(Xb, np.column_stack([w, w * yf]), binner.thresholds, gp, rng, imp)
            self.trees.append(tree)
            oob = w == 0
            if oob.any():
                oob_sum[oob] += tree.predict(X[oob]) > 0.5
                oob_cnt[oob] += 1
            seen = oob_cnt > 0
            err = float(np.mean((oob_sum[seen] / oob_cnt[seen] > 0.5) != y[seen])) if seen.any() else math.inf
            self.oob_errors.append(err)
            if err < best:
                best, stale = err, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        total = imp.sum()
        self._importance = imp / total if total > 0 else imp
        return self

    def tree_votes(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.stack([t.predict(X) > 0.5 for t in self.trees]).astype(float)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.constant is not None:
            return np.full(len(X), self.constant)
        return self.tree_votes(X).mean(axis=0)

    @property
    def oob_accuracy(self) -> float:
        return 1.0 - self.oob_errors[-1] if self.oob_errors else math.nan

    def importance(self) -> np.ndarray | None:
        return self._importance

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def params_dict(self) -> dict:
        return {
            "constant": self.constant,
            "trees": [t.to_dict() for t in self.trees],
            "oob_errors": self.oob_errors,
            "importance": None if self._importance is None else self._importance.tolist(),
        }

    @classmethod
    def from_dicts(cls, config: dict, params: dict, seed: int) -> "RandomForest":
        m = cls(RFConfig(**config), seed)
        m.constant = params["constant"]
        m.trees = [Tree.from_dict(d) for d in params["trees"]]
        m.oob_errors = list(params["oob_errors"])
        m._importance = None if params["importance"] is None else np.asarray(params["importance"])
        return m
