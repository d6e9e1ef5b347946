"""Binary risk labels for windows: harsh-event disjunction, speed-weighted headway
score and their union."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .windowing import EVENT_KINDS, HARSH_KINDS, WindowTable, WindowView


class IndicatorMode(str, Enum):
    HARSH = "harsh"
    HEADWAY = "headway"
    UNIFIED = "unified"


class Clause(str, Enum):
    """Which window(s) feed the threshold test of a harsh event."""

    BOTH = "both"
    OBS = "obs"
    PRED = "pred"


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class HeadwayScoreParams:
    alpha: tuple[float, float, float] = (0.2, 0.5, 1.0)
    p_low: float = 10.0
    p_high: float = 90.0
    sigma_quantile: float = 0.85
    s_low: float | None = None
    s_high: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        a1, a2, a3 = self.alpha
        if not 0 < a1 < a2 < a3:
            raise ValueError(f"headway weights must satisfy 0 < a1 < a2 < a3, got {self.alpha}")
        if not 0 <= self.p_low < self.p_high <= 100:
            raise ValueError(f"need 0 <= p_low < p_high <= 100, got {self.p_low}, {self.p_high}")
        if not 0 <= self.sigma_quantile <= 1:
            raise ValueError(f"sigma_quantile={self.sigma_quantile} outside [0, 1]")

    @property
    def fitted(self) -> bool:
        return self.s_low is not None and self.s_high is not None and self.sigma is not None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HeadwayScoreParams":
        d = json.loads(text)
        d["alpha"] = tuple(d["alpha"])
        return cls(**d)


@dataclass(frozen=True)
class RiskLabel:
    driver_id: str
    trip_id: str
    t: int
    r_harsh: bool
    risk_score_hdw: float
    r_hdw: bool
    r: bool
    tau_used: float


def exceeds_threshold(ev_obs: float, ev_pred: float | None, tau_e: float) -> bool:
    return ev_obs > tau_e or (ev_pred is not None and ev_pred > tau_e)


def harsh_label(view: WindowView, tau_e: float, clause: Clause = Clause.BOTH) -> bool:
    for k in HARSH_KINDS:
        obs = view.ev_obs[k] if clause != Clause.PRED else -math.inf
        pred = None
        if clause != Clause.OBS and view.ev_pred is not None:
            pred = view.ev_pred[k]
        if exceeds_threshold(obs, pred, tau_e):
            return True
    return False


def _check_bounds(params: HeadwayScoreParams) -> tuple[float, float]:
    if params.s_low is None or params.s_high is None:
        raise DegenerateFitError("headway params are not fitted")
    if not params.s_high > params.s_low:
        raise DegenerateFitError(
            f"degenerate speed bounds s_low={params.s_low}, s_high={params.s_high}; widen p_low/p_high"
        )
    return params.s_low, params.s_high


def speed_weight(v_t: float, k: int, params: HeadwayScoreParams) -> float:
    s_low, s_high = _check_bounds(params)
    a = params.alpha[k - 1]
    if v_t <= s_low:
        return 0.0
    if v_t >= s_high:
        return a
    return a * ((v_t - s_low) / (s_high - s_low))


def headway_score(view: WindowView, params: HeadwayScoreParams, prediction: bool = False) -> float:
    props = view.hdw_pred_props if prediction else view.hdw_props
    if props is None:
        return 0.0
    return sum(speed_weight(view.mean_speed_kmh, k, params) * props[k] for k in (1, 2, 3))


def speed_weights(v: np.ndarray, params: HeadwayScoreParams) -> np.ndarray:
    """Vectorised speed_weight: (n, 3) weights for levels 1..3."""
    s_low, s_high = _check_bounds(params)
    ramp = np.clip((np.asarray(v, dtype=float) - s_low) / (s_high - s_low), 0.0, 1.0)
    return ramp[:, None] * np.asarray(params.alpha, dtype=float)[None, :]


def headway_scores(table: WindowTable, params: HeadwayScoreParams, prediction: bool = False) -> np.ndarray:
    w = speed_weights(table.mean_speed, params)
    props = table.hdw_pred if prediction else table.hdw_props
    return np.nan_to_num(np.sum(w * props, axis=1), nan=0.0)


def fit_headway_params(
    table: WindowTable,
    alpha: Sequence[float] = (0.2, 0.5, 1.0),
    p_low: float = 10.0,
    p_high: float = 90.0,
    sigma_quantile: float = 0.85,
) -> HeadwayScoreParams:
    """Fit speed bounds (percentiles of window mean speed) and the score quantile sigma."""
    base = HeadwayScoreParams(tuple(float(a) for a in alpha), p_low, p_high, sigma_quantile)
    speeds = np.asarray(table.mean_speed, dtype=float)
    if len(np.unique(speeds)) < 2:
        raise DegenerateFitError("need at least two distinct window speeds to fit speed bounds")
    s_low, s_high = np.percentile(speeds, [p_low, p_high])
    if not s_high > s_low:
        raise DegenerateFitError(
            f"percentiles p_low={p_low}, p_high={p_high} give equal speeds ({s_low}); widen the spread"
        )
    fitted = replace(base, s_low=float(s_low), s_high=float(s_high), sigma=0.0)
    scores = headway_scores(table, fitted)
    return replace(fitted, sigma=float(np.quantile(scores, sigma_quantile)))


def unified_label(
    view: WindowView,
    tau_e: float,
    params: HeadwayScoreParams,
    mode: IndicatorMode = IndicatorMode.UNIFIED,
) -> RiskLabel:
    mode = IndicatorMode(mode)
    r_harsh = harsh_label(view, tau_e)
    score = headway_score(view, params)
    r_hdw = score > params.sigma
    if mode == IndicatorMode.HARSH:
        r = r_harsh
    elif mode == IndicatorMode.HEADWAY:
        r = r_hdw
    else:
        r = r_harsh or r_hdw
    return RiskLabel(view.driver_id, view.trip_id, view.t, r_harsh, score, r_hdw, r, tau_e)


# --------------------------------------------------------------------------- vectorised labels

_HARSH_COLS = [EVENT_KINDS.index(k) for k in HARSH_KINDS]


def harsh_labels(table: WindowTable, tau_e: float | np.ndarray, clause: Clause = Clause.BOTH) -> np.ndarray:
    """R_harsh for every window; ``tau_e`` may be per-window (personalised thresholds)."""
    tau = np.asarray(tau_e, dtype=float)
    if tau.ndim == 1:
        tau = tau[:, None]
    out = np.zeros(len(table), dtype=bool)
    if clause != Clause.PRED:
        out |= np.any(table.ev_obs[:, _HARSH_COLS] > tau, axis=1)
    if clause != Clause.OBS:
        pred = table.ev_pred[:, _HARSH_COLS]
        with np.errstate(invalid="ignore"):
            out |= np.any(np.where(np.isnan(pred), False, pred > tau), axis=1)
    return out


def headway_labels(table: WindowTable, params: HeadwayScoreParams, clause: Clause = Clause.BOTH) -> np.ndarray:
    if clause == Clause.PRED:
        return headway_scores(table, params, prediction=True) > params.sigma
    return headway_scores(table, params) > params.sigma


def label_table(
    table: WindowTable,
    tau_e: float | np.ndarray,
    params: HeadwayScoreParams | None,
    mode: IndicatorMode | str = IndicatorMode.UNIFIED,
    clause: Clause = Clause.BOTH,
) -> np.ndarray:
    """Boolean risk target R(t) for every window under the chosen indicator mode.

    ``clause`` restricts the evidence to the observation window or the prediction
    window; the headway score only has an observation/prediction split through the
    level proportions, the speed context is always that of W_t.
    """
    mode = IndicatorMode(mode)
    if mode == IndicatorMode.HARSH:
        return harsh_labels(table, tau_e, clause)
    if params is None:
        raise ValueError("headway modes need fitted HeadwayScoreParams")
    hdw = headway_labels(table, params, clause)
    if mode == IndicatorMode.HEADWAY:
        return hdw
    return harsh_labels(table, tau_e, clause) | hdw


def label_records(
    table: WindowTable, tau_e: float, params: HeadwayScoreParams, mode: IndicatorMode | str = IndicatorMode.UNIFIED
) -> list[RiskLabel]:
    mode = IndicatorMode(mode)
    r_harsh = harsh_labels(table, tau_e)
    scores = headway_scores(table, params)
    r_hdw = scores > params.sigma
    r = label_table(table, tau_e, params, mode)
    return [
        RiskLabel(str(table.driver[i]), str(table.trip[i]), int(table.t[i]), bool(r_harsh[i]), float(scores[i]),
                  bool(r_hdw[i]), bool(r[i]), float(tau_e))
        for i in range(len(table))
    ]


def write_labels_csv(labels: Iterable[RiskLabel], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["driver_id", "trip_id", "t", "r_harsh", "risk_score_hdw", "r_hdw", "r", "tau_used"])
        for lab in labels:
            w.writerow([lab.driver_id, lab.trip_id, lab.t, int(lab.r_harsh), repr(lab.risk_score_hdw),
                        int(lab.r_hdw), int(lab.r), repr(lab.tau_used)])


def write_labels_jsonl(labels: Iterable[RiskLabel], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps(asdict(lab), sort_keys=True) + "\n")
