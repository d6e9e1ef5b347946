"""Acceptance suite: one test per criterion, named test_acNN_*.

Run alone with ``pytest tests/test_acceptance.py -v``; each line reads PASSED or FAILED.
"""

import dataclasses
import json
import math
import time

import numpy as np
import pytest

from riskwindow import reports
from riskwindow.cli import main
from riskwindow.labeling import fit_headway_params, label_table
from riskwindow.learners import (
    FeedForwardNetwork,
    GBTConfig,
    GradientBoostedTrees,
    NNConfig,
    RandomForest,
    RFConfig,
    make_model,
)
from riskwindow.learners.boosting import sigmoid
from riskwindow.learners.persist import model_from_dict, model_to_dict
from riskwindow.learners.spaces import Dim, Space
from riskwindow.metrics import ConfusionCounts, auc_pr, f1_from, harmonic_mean, mcc
from riskwindow.optimizer import tpe_maximize
from riskwindow.pipeline import SplitSpec, assign_drivers, exact_shapley, oversample, shapley_values, smote
from riskwindow.telemetry import SynthConfig, generate_synthetic
from riskwindow.threshold import BernsteinParams, ThresholdState, bernstein_bound, update_tau
from riskwindow.windowing import WindowParams, build_table

# ---------------------------------------------------------------- 1


PUBLISHED_HM = [(0.8130, 0.882, 0.846), (0.8152, 0.886, 0.849), (0.8533, 0.916, 0.883), (0.946, 0.861, 0.901)]


def test_ac01_metric_arithmetic():
    t = time.perf_counter()
    for acc, f1, want in PUBLISHED_HM:
        assert abs(harmonic_mean(acc, f1) - want) <= 1e-3, (acc, f1)
    assert abs(f1_from(0.909, 0.857) - 0.882) <= 1e-3
    assert time.perf_counter() - t < 1.0


# ---------------------------------------------------------------- 2


def _brute_labels(records, p: WindowParams, tau, hp, mode):
    """Labels straight from the raw records, one window at a time."""
    out = []
    n = len(records)
    for end in range(p.omega - 1, n, p.delta):
        obs = records[end - p.omega + 1 : end + 1]
        pred = records[end + 1 : min(end + p.horizon, n - 1) + 1]
        harsh = False
        for flag in ("harsh_accel", "harsh_brake", "harsh_corner"):
            hit = sum(1 for r in obs if getattr(r, flag)) / p.omega > tau
            if pred:
                hit = hit or sum(1 for r in pred if getattr(r, flag)) / len(pred) > tau
            harsh = harsh or hit
        v = sum(r.speed_kmh for r in obs) / p.omega
        ramp = min(max((v - hp.s_low) / (hp.s_high - hp.s_low), 0.0), 1.0)
        score = 0.0
        for k in (1, 2, 3):
            score += (ramp * hp.alpha[k - 1]) * (sum(1 for r in obs if r.headway_level == k) / p.omega)
        hdw = score > hp.sigma
        out.append({"harsh": harsh, "headway": hdw, "unified": harsh or hdw}[mode])
    return out


def test_ac02_labeling_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    p = WindowParams(5, 1, 2)
    n_trips = mismatches = checked = 0
    for batch in range(10):
        syn = generate_synthetic(SynthConfig(n_drivers=20, trips_per_driver=5,
                                             trip_length_s=int(rng.integers(8, 200)), seed=batch))
        tab = build_table(syn.trips, p)
        hp = fit_headway_params(tab)
        for mode in ("harsh", "headway", "unified"):
            tau = float(rng.choice([0.0, 0.2, 0.4, 0.5, rng.random()]))
            got = label_table(tab, tau, hp, mode)
            want = [lab for trip in syn.trips for lab in _brute_labels(trip.records(), p, tau, hp, mode)]
            mismatches += int(np.sum(got != np.asarray(want, bool)))
            checked += len(want)
        n_trips += len(syn.trips)
    assert n_trips == 1000 and checked > 0
    assert mismatches == 0
    assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------- 3


def test_ac03_threshold_dynamics():
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(10_000):
        lo = float(rng.uniform(0, 0.5))
        hi = float(rng.uniform(lo, 1.0))
        s = ThresholdState(tau_e=float(rng.random()), tau_min=lo, tau_max=hi,
                           kappa_regret=float(rng.uniform(0, 0.5)), xi_regret=float(rng.uniform(0, 0.5)))
        for _ in range(int(rng.integers(1, 20))):
            s.hm_best, s.hm_best_pred = float(rng.random()), float(rng.random())
            r_t = float(rng.choice([0.0, rng.normal(scale=0.5)]))
            r_pt = float(rng.normal(scale=0.5))
            before = s.tau_e
            after = update_tau(s, r_t, r_pt)
            violations += not lo <= after <= hi
            violations += r_t > 0 and after > before
            violations += r_t <= 0 and after < before
    assert violations == 0


# ---------------------------------------------------------------- 4


def test_ac04_bernstein_rate():
    bp = BernsteinParams(c=1e-12)
    for n in (10**3, 10**4, 10**5):
        ratio = bernstein_bound(0.0, 0.04, 4 * n, bp) / bernstein_bound(0.0, 0.04, n, bp)
        assert abs(ratio - 0.5) <= 0.02, n


# ---------------------------------------------------------------- 5


def test_ac05_split_leakage():
    rng = np.random.default_rng(0)
    for seed in range(100):
        n = int(rng.integers(10, 60))
        counts = {f"D{i}": int(rng.integers(50, 150)) for i in range(n)}
        parts = assign_drivers(counts, SplitSpec(seed=seed))
        groups = [{d for d, p in parts.items() if p == name} for name in ("train", "val", "test")]
        assert not (groups[0] & groups[1] or groups[0] & groups[2] or groups[1] & groups[2])
        assert set().union(*groups) == set(counts)
        total, biggest = sum(counts.values()), max(counts.values())
        for g, frac in zip(groups, (0.70, 0.15, 0.15)):
            assert abs(sum(counts[d] for d in g) - frac * total) <= biggest


# ---------------------------------------------------------------- 6


def test_ac06_smote_geometry():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(25, 3))
    syn = smote(X, 5, 200, seed=1)
    worst = 0.0
    for p in syn:
        best = math.inf
        for a in X:
            for b in X:
                d = b - a
                dd = float(d @ d)
                t = 0.0 if dd == 0 else min(max(float((p - a) @ d) / dd, 0.0), 1.0)
                best = min(best, float(np.linalg.norm(p - (a + t * d))))
        worst = max(worst, best)
    assert worst < 1e-9
    y = np.arange(300) < 40
    _, yo = oversample(rng.normal(size=(300, 3)), y, 5, seed=0)
    assert yo.sum() == (~yo).sum()


# ---------------------------------------------------------------- 7


def _f4(Z):
    return 1.0 / (1.0 + np.exp(-(1.2 * Z[:, 0] - 0.7 * Z[:, 1] + 0.9 * Z[:, 2] * Z[:, 3] + 0.3 * Z[:, 3])))


def test_ac07_shapley():
    rng = np.random.default_rng(3)
    bg, ex = rng.normal(size=(25, 4)), rng.normal(size=(10, 4))
    res = shapley_values(_f4, bg, ex, 400, seed=11)
    for i, x in enumerate(ex):
        tol = 3 * res.se[i] + 1e-9
        assert np.all(np.abs(res.phi[i] - exact_shapley(_f4, bg, x)) <= tol)
        gap = abs(res.phi[i].sum() - (_f4(x[None])[0] - res.base_value))
        assert gap <= 3 * math.sqrt(np.sum(res.se[i] ** 2)) + 1e-9


# ---------------------------------------------------------------- 8


def test_ac08_learners():
    rng = np.random.default_rng(0)
    # gradient check on a tiny network
    cfg = NNConfig(units_1=4, activation_1="tanh", dropout_1=0.0, l2_reg_1=0.01, num_layers=2, units_i=3,
                   activation_i="tanh", dropout_i=0.0, l2_reg_i=0.02)
    net = FeedForwardNetwork(cfg, seed=0)
    net.init_params(3, rng)
    Xg, yg = rng.normal(size=(10, 3)), rng.random(10) < 0.5
    _, grads = net.loss_and_grads(Xg, yg)
    worst, h = 0.0, 1e-6
    for name, g in grads.items():
        p = net.params[name]
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = net.loss_and_grads(Xg, yg)[0]
            p[idx] = old - h
            down = net.loss_and_grads(Xg, yg)[0]
            p[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(abs(fd) + abs(g[idx]), 1e-8))
    assert worst < 1e-4
    # separable blobs
    y = np.arange(200) % 2 == 0
    X = rng.normal(size=(200, 2)) * 0.5 + 4.0 * y[:, None]
    rf = RandomForest(RFConfig(n_estimators=100), seed=0).fit(X, y)
    assert np.all(rf.predict(X) == y)
    # huge gamma accepts no split
    gbt = GradientBoostedTrees(GBTConfig(n_estimators=20, gamma=1e12), seed=0).fit(X, y)
    assert gbt.trees == [] and np.all(gbt.predict_proba(X) == sigmoid(gbt.intercept))
    # bit-identical round trips
    probe = rng.normal(size=(30, 2)) * 3
    for kind, params in (("rf", {"n_estimators": 30}), ("gbt", {"n_estimators": 30}),
                         ("nn", dataclasses.asdict(dataclasses.replace(cfg, epochs=5, batch_size=32)))):
        m = make_model(kind, params, seed=1).fit(X, y, X[:50], y[:50])
        back = model_from_dict(json.loads(json.dumps(model_to_dict(m, probe))))
        assert np.array_equal(back.predict_proba(probe), m.predict_proba(probe))


# ---------------------------------------------------------------- 9


def test_ac09_tpe_vs_random():
    space = Space("x", [Dim("x", "float", 0.0, 1.0)])
    hits, tpe_best, rnd_best = 0, [], []
    for seed in range(20):
        hist = tpe_maximize(space, lambda p: -(p["x"] - 0.3) ** 2, 50, seed=seed)
        best_p, best_v = max(hist, key=lambda h: h[1])
        hits += abs(best_p["x"] - 0.3) <= 0.05
        tpe_best.append(best_v)
        xs = np.random.default_rng(seed).random(50)
        rnd_best.append(float(np.max(-(xs - 0.3) ** 2)))
    assert hits >= 18
    assert np.mean(tpe_best) > np.mean(rnd_best)


# ---------------------------------------------------------------- 10


@pytest.mark.slow
def test_ac10_end_to_end(tmp_path):
    t0 = time.perf_counter()
    assert main(["run", "-o", str(tmp_path)]) == 0
    elapsed = time.perf_counter() - t0
    header, rows = reports.read_table(tmp_path / "evaluate" / "metrics.csv")
    col = {h: i for i, h in enumerate(header)}
    (row,) = [r for r in rows if r[col["partition"]] == "val" and r[col["target"]] == "planted"
              and r[col["model"]] == "ensemble"]
    assert float(row[col["hm"]]) >= 0.80
    _, grid = reports.read_table(tmp_path / "reports" / "ensemble_hm_vs_tau.csv")
    assert reports.is_unimodal([float(h) for _, h in grid])
    for kind in ("rf", "gbt", "nn"):
        assert len(reports.read_trials(tmp_path / "optimize" / f"study_{kind}.jsonl")) == 25
    assert elapsed < 600


# ---------------------------------------------------------------- 11


def _brute_auc(scores, labels):
    n_pos = sum(labels)
    area, prev = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= thr and not y)
        area += (tp / n_pos - prev) * (tp / (tp + fp))
        prev = tp / n_pos
    return area


def _brute_mcc(y, p):
    tp = sum(a and b for a, b in zip(y, p))
    tn = sum(not a and not b for a, b in zip(y, p))
    fp = sum(not a and b for a, b in zip(y, p))
    fn = sum(a and not b for a, b in zip(y, p))
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)


def test_ac11_metric_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(2, 200))
        y = rng.random(n) < rng.uniform(0.05, 0.95)
        y[0], y[1] = True, False
        s = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding produces ties
        p = rng.random(n) < 0.5
        assert auc_pr(s, y) == _brute_auc(s.tolist(), y.tolist())
        assert mcc(ConfusionCounts.from_labels(y, p)) == _brute_mcc(y.tolist(), p.tolist())
