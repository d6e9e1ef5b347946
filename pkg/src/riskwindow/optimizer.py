"""Bi-level search: TPE over learner hyperparameters outside, threshold adaptation
and relabeling inside each trial, median pruning, JSON-lines study log."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.special import ndtr

from .labeling import Clause, HeadwayScoreParams, IndicatorMode, label_table
from .learners import Classifier, LearnerError, make_model
from .learners.boosting import GBTConfig, GradientBoostedTrees
from .learners.spaces import SPACES, Dim, Space, check_space
from .metrics import hm_score
from .pipeline import Datasets, FeatureSelectionState, reselect_reason, select_features
from .threshold import ThresholdState, compute_regret, rolling_regret, update_tau

logger = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


# --------------------------------------------------------------------------- TPE


def _tn_pdf(x: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """Density at x of each Gaussian truncated to [0, 1]; shape (len(x), len(mu))."""
    z = (x[:, None] - mu[None, :]) / sd[None, :]
    mass = ndtr((1 - mu) / sd) - ndtr(-mu / sd)
    return np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * sd * np.maximum(mass, 1e-12))


class Parzen:
    """Mixture of truncated Gaussians on [0, 1] plus a uniform prior component."""

    def __init__(self, points, prior_weight: float = 1.0):
        self.mu = np.asarray(points, dtype=float)
        n = len(self.mu)
        self.sd = np.zeros(n)
        if n:
            # bandwidth: distance to the farther sorted neighbour (bounds count as neighbours)
            order = np.argsort(self.mu, kind="stable")
            ext = np.concatenate([[0.0], self.mu[order], [1.0]])
            gap = np.maximum(ext[1:-1] - ext[:-2], ext[2:] - ext[1:-1])
            self.sd[order] = np.clip(gap, 1.0 / (n + 1), 1.0)
        self.w_prior = prior_weight / (n + prior_weight)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        out = np.full(len(x), self.w_prior)
        if len(self.mu):
            out += (1 - self.w_prior) * _tn_pdf(x, self.mu, self.sd).mean(axis=1)
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = rng.random(n)
        if len(self.mu) == 0:
            return out
        comp = rng.integers(0, len(self.mu), n)
        use_prior = rng.random(n) < self.w_prior
        for i in np.flatnonzero(~use_prior):
            for _ in range(32):
                v = rng.normal(self.mu[comp[i]], self.sd[comp[i]])
                if 0.0 <= v <= 1.0:
                    out[i] = v
                    break
            else:
                out[i] = min(max(self.mu[comp[i]], 0.0), 1.0)
        return out


@dataclass
class TPEState:
    """Univariate tree-structured Parzen estimator (maximisation)."""

    space: Space
    seed: int = 0
    gamma_split: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24
    history: list[tuple[dict, float]] = field(default_factory=list)
    n_suggested: int = 0

    def __post_init__(self):
        if not 0 < self.gamma_split < 1:
            raise ValueError("gamma_split must be in (0, 1)")
        if not self.space.dims:
            raise ValueError("empty search space")

    def tell(self, params: dict, value: float) -> None:
        self.history.append((dict(params), float(value)))

    def suggest(self) -> dict:
        rng = np.random.default_rng([self.seed, self.n_suggested])
        self.n_suggested += 1
        if len(self.history) < self.n_startup:
            return self._random(rng)
        ranked = sorted(self.history, key=lambda h: -h[1])
        n_good = max(1, math.ceil(self.gamma_split * len(ranked)))
        good = [p for p, _ in ranked[:n_good]]
        bad = [p for p, _ in ranked[n_good:]]
        out: dict[str, Any] = {}
        for d in self.space.dims:
            if not self.space.active(d, out):
                continue
            out[d.name] = self._pick(d, good, bad, rng, self.space.high_for(d, out))
        return out

    def _random(self, rng: np.random.Generator) -> dict:
        out: dict[str, Any] = {}
        for d in self.space.dims:
            if self.space.active(d, out):
                out[d.name] = d.from_unit(float(rng.random()), self.space.high_for(d, out))
        return out

    def _pick(self, d: Dim, good: list[dict], bad: list[dict], rng, high) -> Any:
        gv = [p[d.name] for p in good if d.name in p]
        bv = [p[d.name] for p in bad if d.name in p]
        if d.kind == "cat":
            K = len(d.choices)
            lg = np.ones(K)
            lb = np.ones(K)
            for v in gv:
                lg[d.choices.index(v)] += 1
            for v in bv:
                lb[d.choices.index(v)] += 1
            lg /= lg.sum()
            lb /= lb.sum()
            cand = rng.choice(K, self.n_candidates, p=lg)
            best = cand[np.argmax(lg[cand] / lb[cand])]
            return d.choices[int(best)]
        l = Parzen([d.to_unit(v) for v in gv])
        g = Parzen([d.to_unit(v) for v in bv])
        cand = l.sample(rng, self.n_candidates)
        u = float(cand[np.argmax(l.pdf(cand) / g.pdf(cand))])
        v = d.from_unit(u)
        if high is not None and v > high:
            grid = d.grid(high)
            v = grid[-1] if grid else high
        return v


def tpe_maximize(space: Space, objective: Callable[[dict], float], n_trials: int, seed: int = 0, **kw) -> list[tuple[dict, float]]:
    """Plain ask/tell loop; returns the (params, value) history in trial order."""
    tpe = TPEState(space, seed, **kw)
    for _ in range(n_trials):
        p = tpe.suggest()
        tpe.tell(p, objective(p))
    return tpe.history


# --------------------------------------------------------------------------- pruning


@dataclass
class MedianPruner:
    n_warmup_trials: int = 5
    values: dict[int, list[float]] = field(default_factory=dict)

    def should_prune(self, step: int, value: float) -> bool:
        prior = self.values.get(step, [])
        if len(prior) < self.n_warmup_trials:
            return False
        return value < float(np.median(prior))

    def record(self, step: int, value: float) -> None:
        self.values.setdefault(step, []).append(value)


# --------------------------------------------------------------------------- inner loop


@dataclass
class InnerConfig:
    steps: int = 10
    rv_tol: float = 1e-3
    indicator: IndicatorMode = IndicatorMode.UNIFIED
    threshold: dict = field(default_factory=dict)  # ThresholdState overrides
    use_smote: bool = True
    smote_k: int = 5
    reselect: bool = True


@dataclass
class TrialContext:
    data: Datasets
    headway: HeadwayScoreParams | None
    inner: InnerConfig
    selection: FeatureSelectionState | None = None
    columns: list[int] | None = None
    selection_rows: int = 10_000


@dataclass
class Trial:
    trial_id: int
    kind: str
    params: dict
    status: str = "complete"  # complete | pruned | failed
    tau_e: float | None = None
    hm: float | None = None
    trace: list[dict] = field(default_factory=list)
    error: str | None = None
    columns: list[str] | None = None
    model: Classifier | None = field(default=None, repr=False, compare=False)

    def to_json(self, extra: dict | None = None) -> str:
        d = {
            "trial_id": self.trial_id,
            "kind": self.kind,
            "params": self.params,
            "status": self.status,
            "tau_e": self.tau_e,
            "hm": self.hm,
            "columns": self.columns,
            "trace": self.trace,
            "error": self.error,
        }
        d.update(extra or {})
        return json.dumps(d, sort_keys=True)


def fit_surrogate(X: np.ndarray, y: np.ndarray, seed: int) -> Classifier:
    """Small boosted model used only to score features."""
    cfg = GBTConfig(n_estimators=60, learning_rate=0.1, max_depth=4, subsample=0.8, colsample_bytree=0.8)
    return GradientBoostedTrees(cfg, seed).fit(X, y)


def refresh_selection(ctx: TrialContext, y_train: np.ndarray, tau: float, seed: int, reason: str) -> None:
    """Re-score features on (a subsample of) the training partition and update the
    active columns."""
    X = ctx.data.X("train")
    rng = np.random.default_rng(seed)
    idx = np.arange(len(X))
    if len(idx) > ctx.selection_rows:
        idx = np.sort(rng.choice(len(X), ctx.selection_rows, replace=False))
    Xs, ys = X[idx], y_train[idx]
    if ys.all() or not ys.any():
        logger.warning("feature selection skipped: training labels have one class at tau=%.3f", tau)
        return
    model = fit_surrogate(Xs, ys, seed)
    ctx.selection = select_features(ctx.selection, model, Xs, tau, seed=seed, reason=reason)
    ctx.columns = ctx.selection.selected_index()


def run_trial(
    kind: str,
    params: dict,
    ctx: TrialContext,
    trial_id: int = 0,
    seed: int = 0,
    pruner: MedianPruner | None = None,
) -> Trial:
    """Inner loop: adapt tau_e from regret, relabel, refit, score, repeat."""
    trial = Trial(trial_id, kind, dict(params))
    inner = ctx.inner
    mode = IndicatorMode(inner.indicator)
    state = ThresholdState(**inner.threshold)
    train, val = ctx.data.train, ctx.data.val
    has_p = val.pred_len > 0
    half = max(1, math.ceil(inner.steps / 2))
    best_hm, best_tau, best_model, best_cols = -1.0, state.tau_e, None, None
    running_best = -1.0
    r_t = r_pt = 0.0
    try:
        for step in range(inner.steps):
            if step > 0:
                update_tau(state, r_t, r_pt)
            tau = state.tau_e
            y_tr = label_table(train, tau, ctx.headway, mode)
            y_va = label_table(val, tau, ctx.headway, mode)
            if inner.reselect and ctx.selection is not None:
                reason = reselect_reason(ctx.selection, tau, ctx.data.X("train"))
                if reason is not None:
                    refresh_selection(ctx, y_tr, tau, seed, reason)
            cols = ctx.columns
            X_tr, y_fit = ctx.data.training_arrays(y_tr, cols, inner.smote_k, seed, inner.use_smote)
            X_va = ctx.data.X("val", cols)
            model = make_model(kind, params, seed).fit(X_tr, y_fit, X_va, y_va)
            pred = model.predict(X_va, tau)
            hm = hm_score(y_va, pred)
            y_obs = label_table(val, tau, ctx.headway, mode, Clause.OBS)
            y_pp = label_table(val, tau, ctx.headway, mode, Clause.PRED)
            r_t, r_pt = compute_regret(pred, y_obs, pred[has_p], y_pp[has_p], state)
            hist = list(state.regret_history) + [(r_t, r_pt)]
            ror, rv = rolling_regret(hist, state.regret_window)
            trial.trace.append(
                {"step": step, "tau_e": tau, "hm": hm, "r_t": r_t, "r_pt": r_pt, "ror": ror, "rv": rv}
            )
            if hm > best_hm:
                best_hm, best_tau, best_model, best_cols = hm, tau, model, cols
            running_best = max(running_best, hm)
            if pruner is not None and step + 1 == half and inner.steps > 1:
                prune = pruner.should_prune(half, running_best)
                pruner.record(half, running_best)
                if prune:
                    trial.status = "pruned"
                    break
            if len(hist) >= 3 and rv < inner.rv_tol:
                break
    except (LearnerError, FloatingPointError, ValueError) as exc:
        logger.warning("trial %d (%s) failed: %s", trial_id, kind, exc)
        trial.status = "failed"
        trial.error = str(exc)
        return trial
    trial.tau_e = best_tau
    trial.hm = best_hm
    trial.model = best_model
    if best_cols is not None:
        trial.columns = [ctx.data.train.feature_names[c] for c in best_cols]
    return trial


# --------------------------------------------------------------------------- outer loop


@dataclass
class Study:
    kind: str
    trials: list[Trial]
    best: Trial

    def write_jsonl(self, path, extra: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.trials:
                fh.write(t.to_json(extra) + "\n")


def select_best(trials: list[Trial]) -> Trial:
    done = [t for t in trials if t.status == "complete" and t.hm is not None]
    if not done:
        raise OptimizationError("no trial completed")
    return max(done, key=lambda t: (t.hm, -t.trial_id))


def optimize(
    kind: str,
    ctx: TrialContext,
    budget: int = 25,
    seed: int = 0,
    space: Space | None = None,
    n_startup: int = 10,
    prune: bool = True,
    n_warmup_trials: int = 5,
    on_trial: Callable[[Trial], None] | None = None,
) -> Study:
    sp = space or SPACES[kind]
    tpe = TPEState(sp, seed, n_startup=n_startup)
    pruner = MedianPruner(n_warmup_trials) if prune else None
    trials: list[Trial] = []
    best: Trial | None = None
    for i in range(budget):
        params = tpe.suggest()
        check_space(kind, params, sp)
        t = run_trial(kind, params, ctx, i, seed, pruner)
        trials.append(t)
        if t.status == "complete":
            tpe.tell(params, t.hm)
        elif t.status == "pruned":
            tpe.tell(params, max((s["hm"] for s in t.trace), default=0.0))
        if t.status == "complete" and (best is None or t.hm > best.hm):
            if best is not None:
                best.model = None
            best = t
        elif t is not best:
            t.model = None
        if on_trial is not None:
            on_trial(t)
        logger.info("%s trial %d: %s hm=%s tau=%s", kind, i, t.status, t.hm, t.tau_e)
    return Study(kind, trials, select_best(trials))
