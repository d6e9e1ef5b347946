"""JSON model artifacts with an embedded probe batch.

Loading re-runs ``predict_proba`` on the probe rows and refuses the artifact unless
the output matches the stored probabilities bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .base import Classifier
from .boosting import GradientBoostedTrees
from .forest import RandomForest
from .network import FeedForwardNetwork

FORMAT = "riskwindow-model"
VERSION = 1
KINDS: dict[str, type[Classifier]] = {"rf": RandomForest, "gbt": GradientBoostedTrees, "nn": FeedForwardNetwork}


class ArtifactError(ValueError):
    pass


def model_to_dict(model: Classifier, probe: np.ndarray, extra: dict | None = None) -> dict:
    probe = np.asarray(probe, dtype=float)
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "config": model.config_dict(),
        "params": model.params_dict(),
        "probe": {"X": probe.tolist(), "proba": model.predict_proba(probe).tolist()},
        "extra": extra or {},
    }


def model_from_dict(d: dict, verify: bool = True) -> Classifier:
    if d.get("format") != FORMAT:
        raise ArtifactError("not a model artifact")
    if d.get("version") != VERSION:
        raise ArtifactError(f"unsupported artifact version {d.get('version')!r}")
    try:
        cls = KINDS[d["kind"]]
    except KeyError:
        raise ArtifactError(f"unknown model kind {d.get('kind')!r}") from None
    model = cls.from_dicts(d["config"], d["params"], d["seed"])
    if verify:
        X = np.asarray(d["probe"]["X"], dtype=float)
        want = np.asarray(d["probe"]["proba"], dtype=float)
        got = model.predict_proba(X) if len(X) else want
        if got.shape != want.shape or not np.array_equal(got, want):
            raise ArtifactError("probe predictions differ from the stored ones")
    return model


def save_model(model: Classifier, path: str | Path, probe: np.ndarray, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, probe, extra)))


def load_model(path: str | Path, verify: bool = True) -> Classifier:
    return model_from_dict(json.loads(Path(path).read_text()), verify)
