"""Regularised gradient-boosted trees on the logistic loss."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .base import Classifier, check_xy
from .tree import Binner, GrowParams, Tree, grow_tree

logger = logging.getLogger(__name__)


@dataclass
class GBTConfig:
    n_estimators: int = 100
    learning_rate: float = 0.05
    max_depth: int = 6
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    gamma: float = 0.0
    reg_lambda: float = 1.0
    reg_alpha: float = 0.1
    early_stopping_rounds: int = 20
    min_child_weight: float = 1.0


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def log_loss(y, p) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


class GradientBoostedTrees(Classifier):
    """Additive trees with shrinkage, row/feature subsampling, L1/L2 leaf penalties and a
    minimum split gain. A round whose tree accepts no split adds nothing."""

    kind = "gbt"

    def __init__(self, cfg: GBTConfig | None = None, seed: int = 0):
        super().__init__(seed)
        self.cfg = cfg or GBTConfig()
        self.intercept = 0.0
        self.trees: list[Tree] = []
        self.val_trace: list[float] = []
        self.best_round = 0
        self._importance: np.ndarray | None = None

    def fit(self, X, y, X_val=None, y_val=None) -> "GradientBoostedTrees":
        X, y = check_xy(X, y)
        cfg = self.cfg
        n, F = X.shape
        yf = y.astype(float)
        prior = float(np.clip(yf.mean(), 1e-6, 1 - 1e-6))
        self.intercept = math.log(prior / (1 - prior))
        self.trees, self.val_trace = [], []
        imp = np.zeros(F)
        if cfg.n_estimators == 0:
            self._importance = imp
            return self
        binner = Binner.fit(X)
        Xb = binner.transform(X)
        rng = np.random.default_rng(self.seed)
        gp = GrowParams(
            kind="grad",
            max_depth=cfg.max_depth,
            reg_lambda=cfg.reg_lambda,
            reg_alpha=cfg.reg_alpha,
            gamma=cfg.gamma,
            min_child_weight=cfg.min_child_weight,
        )
        raw = np.full(n, self.intercept)
        has_val = X_val is not None and y_val is not None and len(y_val) > 0
        if has_val:
            X_val = np.asarray(X_val, dtype=float)
            y_val = np.asarray(y_val).astype(float)
            raw_val = np.full(len(X_val), self.intercept)
            best_loss = log_loss(y_val, sigmoid(raw_val))
        kept_at_best = 0
        stale = 0
        n_cols = max(1, int(round(cfg.colsample_bytree * F)))
        for _ in range(cfg.n_estimators):
            p = sigmoid(raw)
            g = p - yf
            h = p * (1 - p)
            take = np.zeros(n)
            take[rng.choice(n, max(1, int(round(cfg.subsample * n))), replace=False)] = 1.0
            mask = np.zeros(F, dtype=bool)
            mask[rng.choice(F, n_cols, replace=False)] = True
            gp.feature_mask = mask
            round_imp = np.zeros(F)
            tree = grow_tree(Xb, np.column_stack([take, g * take, h * take]), binner.thresholds, gp, rng, round_imp)
            if tree.n_splits > 0:
                self.trees.append(tree)
                imp += round_imp
                raw += cfg.learning_rate * tree.predict(X)
                if has_val:
                    raw_val += cfg.learning_rate * tree.predict(X_val)
            if has_val:
                loss = log_loss(y_val, sigmoid(raw_val))
                self.val_trace.append(loss)
                if loss < best_loss - 1e-12:
                    best_loss, kept_at_best, stale = loss, len(self.trees), 0
                else:
                    stale += 1
                    if stale >= cfg.early_stopping_rounds:
                        break
        if has_val:
            self.trees = self.trees[:kept_at_best]
        self.best_round = len(self.trees)
        total = imp.sum()
        self._importance = imp / total if total > 0 else imp
        return self

    def staged_raw(self, X) -> np.ndarray:
        """Raw scores after 0..m trees, shape (m + 1, n)."""
        X = np.asarray(X, dtype=float)
        out = np.empty((len(self.trees) + 1, len(X)))
        out[0] = self.intercept
        for i, t in enumerate(self.trees):
            out[i + 1] = out[i] + self.cfg.learning_rate * t.predict(X)
        return out

    def staged_predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.staged_raw(X))

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        raw = np.full(len(X), self.intercept)
        for t in self.trees:
            raw += self.cfg.learning_rate * t.predict(X)
        return sigmoid(raw)

    def importance(self) -> np.ndarray | None:
        return self._importance

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def params_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "trees": [t.to_dict() for t in self.trees],
            "val_trace": self.val_trace,
            "importance": None if self._importance is None else self._importance.tolist(),
        }

    @classmethod
    def from_dicts(cls, config: dict, params: dict, seed: int) -> "GradientBoostedTrees":
        m = cls(GBTConfig(**config), seed)
        m.intercept = params["intercept"]
        m.trees = [Tree.from_dict(d) for d in params["trees"]]
        m.val_trace = list(params["val_trace"])
        m.best_round = len(m.trees)
        m._importance = None if params["importance"] is None else np.asarray(params["importance"])
        return m
