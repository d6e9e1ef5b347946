"""Adaptive risk threshold: empirical-Bernstein anchored statistical threshold and the
regret-driven clamped update rule, kept per driver."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .metrics import hm_score
from .windowing import EVENT_KINDS, WindowTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BernsteinParams:
    delta_b: float = 0.05
    c: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta_b < 1:
            raise ValueError(f"delta_b={self.delta_b} must lie in (0, 1)")
        if not self.c > 0:
            raise ValueError(f"c={self.c} must be positive")


def bernstein_bound(mean: float, var: float, n: int, p: BernsteinParams = BernsteinParams()) -> float:
    """Empirical Bernstein deviation at confidence 1 - delta_b (Maurer-Pontil closed form).

    ``mean`` is accepted for call-site symmetry; the bound depends on variance and n only.
    """
    if n < 2:
        raise ValueError(f"Bernstein bound needs n >= 2 samples, got {n}")
    if var < 0:
        raise ValueError(f"negative variance {var}")
    log_term = math.log(2.0 / p.delta_b)
    return math.sqrt(2.0 * var * log_term / n) + 7.0 * p.c * log_term / (3.0 * (n - 1))


@dataclass
class ThresholdState:
    driver_id: str = "*"
    tau_e: float = 0.5
    tau_min: float = 0.05
    tau_max: float = 0.95
    alpha_sens: float = 1.0
    gamma_pred: float = 0.5
    kappa_regret: float = 0.05
    xi_regret: float = 0.02
    regret_window: int = 10
    hm_best: float = 0.0
    hm_best_pred: float = 0.0
    regret_history: deque = field(default_factory=deque)

    def __post_init__(self):
        if not self.tau_min <= self.tau_max:
            raise ValueError(f"tau_min={self.tau_min} > tau_max={self.tau_max}")
        if self.regret_window < 1:
            raise ValueError("regret_window must be >= 1")
        self.regret_history = deque(self.regret_history, maxlen=self.regret_window)
        self.tau_e = self.clamp(self.tau_e)

    def clamp(self, tau: float) -> float:
        return min(self.tau_max, max(self.tau_min, tau))


def statistical_threshold(
    mu_w: float,
    sigma_w: float,
    sigma_p: float | None,
    state: ThresholdState,
    bound: float,
) -> float:
    """mu + alpha*sigma_W + gamma*sigma_P + B, clamped; the gamma term is skipped without P_t."""
    tau = mu_w + state.alpha_sens * sigma_w + bound
    if sigma_p is not None and not math.isnan(sigma_p):
        tau += state.gamma_pred * sigma_p
    return state.clamp(tau)


def rolling_regret(history: Iterable[tuple[float, float]], window: int) -> tuple[float, float]:
    """(RoR, RV): mean and population std of R_i + R_Pi over the last ``window`` entries."""
    sums = [a + b for a, b in history]
    if not sums:
        raise ValueError("regret history is empty")
    recent = np.asarray(sums[-window:], dtype=float)
    ror = float(recent.mean())
    rv = float(math.sqrt(np.mean((recent - ror) ** 2)))
    return ror, rv


def update_tau(state: ThresholdState, r_t: float, r_pt: float, hm_pred_best: float | None = None) -> float:
    """One regret-driven step; positive regret lowers tau, otherwise tau rises by the
    remaining headroom of the best harmonic means. Appends (R_t, R_Pt) to the history."""
    if not (math.isfinite(r_t) and math.isfinite(r_pt)):
        raise ValueError(f"non-finite regret ({r_t}, {r_pt})")
    hm_p = state.hm_best_pred if hm_pred_best is None else hm_pred_best
    if r_t > 0:
        # a prediction-window gain (negative R_Pt) must not turn this into an upward step
        tau = state.tau_e - state.kappa_regret * r_t - state.xi_regret * max(r_pt, 0.0)
    else:
        tau = state.tau_e + state.kappa_regret * (1.0 - state.hm_best) + state.xi_regret * (1.0 - hm_p)
    tau = state.clamp(tau)
    state.tau_e = tau
    state.regret_history.append((float(r_t), float(r_pt)))
    return tau


def compute_regret(
    pred_obs,
    true_obs,
    pred_p,
    true_p,
    state: ThresholdState,
) -> tuple[float, float]:
    """Shortfall of the current HM from the best HM seen so far, for the rolling-window
    slice and the prediction-window slice. Running maxima are updated afterwards."""
    if len(true_obs) == 0 or len(true_p) == 0:
        logger.warning("empty label slice for driver %s: regret set to 0", state.driver_id)
        return 0.0, 0.0
    hm = hm_score(true_obs, pred_obs)
    hm_p = hm_score(true_p, pred_p)
    r_t = state.hm_best - hm
    r_pt = state.hm_best_pred - hm_p
    state.hm_best = max(state.hm_best, hm)
    state.hm_best_pred = max(state.hm_best_pred, hm_p)
    return r_t, r_pt


# --------------------------------------------------------------------------- anchoring


@dataclass(frozen=True)
class AnchorStats:
    kind: str
    mu_w: float
    sigma_w: float
    sigma_p: float | None
    n: int
    bound: float
    tau: float


def anchor_threshold(
    table: WindowTable, state: ThresholdState, bp: BernsteinParams = BernsteinParams(), kinds=("h_a", "h_b", "h_c")
) -> tuple[float, list[AnchorStats]]:
    """Statistical anchor from one driver's windows: per event kind compute
    mu/sigma of the observation proportions, sigma of the prediction proportions and
    the Bernstein correction; the anchor is the largest per-kind threshold."""
    stats = []
    for kind in kinds:
        j = EVENT_KINDS.index(kind)
        obs = table.ev_obs[:, j]
        n = len(obs)
        if n < 2:
            continue
        pred = table.ev_pred[:, j]
        pred = pred[~np.isnan(pred)]
        sigma_p = float(pred.std()) if len(pred) >= 2 else None
        var = float(obs.var(ddof=1))
        b = bernstein_bound(float(obs.mean()), var, n, bp)
        tau = statistical_threshold(float(obs.mean()), float(obs.std()), sigma_p, state, b)
        stats.append(AnchorStats(kind, float(obs.mean()), float(obs.std()), sigma_p, n, b, tau))
    if not stats:
        return state.tau_e, []
    return max(s.tau for s in stats), stats


class ThresholdBank:
    """Per-driver ThresholdState, created on first use from shared defaults."""

    def __init__(self, defaults: Mapping | None = None):
        self.defaults = dict(defaults or {})
        self.states: dict[str, ThresholdState] = {}

    def get(self, driver_id: str) -> ThresholdState:
        if driver_id not in self.states:
            self.states[driver_id] = ThresholdState(driver_id=driver_id, **self.defaults)
        return self.states[driver_id]

    def anchor_all(self, table: WindowTable, bp: BernsteinParams = BernsteinParams()) -> dict[str, float]:
        out = {}
        for drv in sorted(set(table.driver)):
            sub = table.take(np.flatnonzero(table.driver == drv))
            st = self.get(str(drv))
            st.tau_e, _ = anchor_threshold(sub, st, bp)
            out[str(drv)] = st.tau_e
        return out

    def per_window(self, table: WindowTable) -> np.ndarray:
        return np.array([self.get(str(d)).tau_e for d in table.driver], dtype=float)


@dataclass(frozen=True)
class TrajectoryRow:
    driver: str
    step: int
    tau_e: float
    r_t: float
    r_pt: float
    ror: float
    rv: float
    bound: float


TRAJECTORY_FIELDS = ("driver", "step", "tau_e", "r_t", "r_pt", "ror", "rv", "bound")


def write_trajectory(rows: Iterable[TrajectoryRow], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_FIELDS)
        for r in rows:
            w.writerow([r.driver, r.step] + [repr(float(getattr(r, f))) for f in TRAJECTORY_FIELDS[2:]])
