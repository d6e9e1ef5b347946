"""Binary classifiers sharing one fit / predict_proba / predict contract."""

from .base import Classifier, LearnerError
from .boosting import GBTConfig, GradientBoostedTrees
from .cdsc import CDSCState, cdsc_correlation
from .forest import RandomForest, RFConfig
from .network import FeedForwardNetwork, NNConfig
from .persist import load_model, save_model
from .spaces import SPACES, check_space

CONFIGS = {"rf": RFConfig, "gbt": GBTConfig, "nn": NNConfig}


def make_model(kind: str, params: dict | None = None, seed: int = 0) -> Classifier:
    """Build an unfitted learner of ``kind`` from hyperparameter values."""
    cfg_cls = CONFIGS[kind]
    cfg = cfg_cls(**(params or {}))
    return {"rf": RandomForest, "gbt": GradientBoostedTrees, "nn": FeedForwardNetwork}[kind](cfg, seed)


__all__ = [
    "CDSCState",
    "CONFIGS",
    "Classifier",
    "FeedForwardNetwork",
    "GBTConfig",
    "GradientBoostedTrees",
    "LearnerError",
    "NNConfig",
    "RFConfig",
    "RandomForest",
    "SPACES",
    "cdsc_correlation",
    "check_space",
    "load_model",
    "make_model",
    "save_model",
]
