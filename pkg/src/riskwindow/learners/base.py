"""Common classifier contract."""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)


class LearnerError(RuntimeError):
    """Training failed (non-finite loss, unusable data)."""


class Classifier:
    """Binary classifier: probabilities in [0, 1], thresholded predictions, importances."""

    kind = "base"

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def fit(self, X, y, X_val=None, y_val=None) -> "Classifier":
        raise NotImplementedError

    def predict_proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return self.predict_proba(X) > threshold

    def importance(self) -> np.ndarray | None:
        return None

    # persistence hooks
    def config_dict(self) -> dict:
        raise NotImplementedError

    def params_dict(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_dicts(cls, config: dict, params: dict, seed: int) -> "Classifier":
        raise NotImplementedError


def check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(bool)
    if X.ndim != 2 or len(X) != len(y):
        raise LearnerError(f"bad shapes X{X.shape}, y{y.shape}")
    if len(y) == 0:
        raise LearnerError("no training rows")
    return X, y
