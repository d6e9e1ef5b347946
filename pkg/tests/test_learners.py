import dataclasses
import json

import numpy as np
import pytest

from riskwindow.learners import (
    SPACES,
    CDSCState,
    FeedForwardNetwork,
    GBTConfig,
    GradientBoostedTrees,
    LearnerError,
    NNConfig,
    RandomForest,
    RFConfig,
    cdsc_correlation,
    check_space,
    load_model,
    make_model,
    save_model,
)
from riskwindow.learners.boosting import log_loss, sigmoid
from riskwindow.learners.persist import ArtifactError, model_from_dict, model_to_dict
from riskwindow.learners.spaces import space_violations


def blobs(n=200, seed=0, gap=4.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2 == 0
    X = rng.normal(size=(n, 2)) * 0.5
    X[y] += gap
    return X, y


def xor(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    return X, (X[:, 0] > 0) ^ (X[:, 1] > 0)


TINY_NN = NNConfig(units_1=4, activation_1="tanh", dropout_1=0.0, l2_reg_1=0.01, num_layers=2, units_i=3,
                   activation_i="tanh", dropout_i=0.0, l2_reg_i=0.02, epochs=5, batch_size=16)


# ---------------------------------------------------------------- CDSC


def test_cdsc_examples():
    assert cdsc_correlation([0.9, 0.7, 0.5], [0.9, 0.7, 0.5]) == pytest.approx(1.0)
    assert cdsc_correlation([0.9, 0.7, 0.5], [0.1, 0.3, 0.5]) == pytest.approx(-1.0)
    assert cdsc_correlation([0.9, 0.7, 0.5], [0.4, 0.4, 0.4]) is None
    with pytest.raises(ValueError):
        cdsc_correlation([1.0], [1.0])


def test_cdsc_state_stops_after_patience():
    s = CDSCState(kappa_cdsc=2, r_stop=0.0, patience_epochs=2)
    # training error keeps falling while validation error climbs
    stops = [s.update(1.0 - 0.1 * i, 0.5 + 0.1 * i) for i in range(5)]
    assert stops == [False, False, False, True, True]


def test_cdsc_undefined_does_not_count():
    s = CDSCState(kappa_cdsc=1, patience_epochs=1)
    assert not any(s.update(1.0 - 0.1 * i, 0.3) for i in range(5))
    assert s.r is None


# ---------------------------------------------------------------- forest


def test_forest_separable_blobs():
    X, y = blobs()
    m = RandomForest(RFConfig(n_estimators=100), seed=1).fit(X, y)
    assert np.all(m.predict(X) == y)


def test_forest_stumps_cannot_do_xor():
    X, y = xor()
    m = RandomForest(RFConfig(n_estimators=100, max_depth=1, patience=100), seed=0).fit(X, y)
    assert abs(m.oob_accuracy - 0.5) < 0.1


def test_forest_deterministic():
    X, y = xor(200)
    a = RandomForest(RFConfig(n_estimators=30), seed=5).fit(X, y)
    b = RandomForest(RFConfig(n_estimators=30), seed=5).fit(X, y)
    np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))
    assert a.oob_errors == b.oob_errors


def test_forest_proba_is_vote_mean():
    X, y = xor(200)
    m = RandomForest(RFConfig(n_estimators=20, patience=50), seed=2).fit(X, y)
    votes = m.tree_votes(X)
    np.testing.assert_array_equal(m.predict_proba(X), votes.mean(axis=0))
    # a duplicated tree pulls the probability towards its own vote
    before = m.predict_proba(X)
    m.trees.append(m.trees[0])
    after = m.predict_proba(X)
    assert np.all((after - before) * (votes[0] - before) >= 0)


def test_forest_oob_patience_stops_growth():
    X, y = blobs()
    m = RandomForest(RFConfig(n_estimators=500, patience=5), seed=0).fit(X, y)
    assert len(m.trees) < 500
    assert len(m.oob_errors) == len(m.trees)


def test_single_class_is_constant(caplog):
    X = np.zeros((5, 2))
    m = RandomForest(seed=0).fit(X, np.ones(5, bool))
    assert np.all(m.predict_proba(X) == 1.0)
    assert "single-class" in caplog.text


# ---------------------------------------------------------------- boosting


def test_gbt_zero_rounds_is_base_rate():
    X, y = xor(100)
    m = GradientBoostedTrees(GBTConfig(n_estimators=0)).fit(X, y)
    np.testing.assert_allclose(m.predict_proba(X), y.mean(), rtol=1e-12)


def test_gbt_beats_intercept_on_validation():
    X, y = blobs(seed=0)
    Xv, yv = blobs(seed=1)
    m = GradientBoostedTrees(GBTConfig(n_estimators=50, learning_rate=0.1), seed=0).fit(X, y, Xv, yv)
    assert log_loss(yv, m.predict_proba(Xv)) < log_loss(yv, np.full(len(yv), y.mean()))


def test_gbt_huge_gamma_is_intercept():
    X, y = xor(200)
    m = GradientBoostedTrees(GBTConfig(n_estimators=30, gamma=1e9), seed=0).fit(X, y)
    assert m.trees == []
    np.testing.assert_allclose(m.predict_proba(X), sigmoid(m.intercept))


def test_gbt_staged_trace():
    X, y = xor(200)
    m = GradientBoostedTrees(GBTConfig(n_estimators=20, learning_rate=0.1, early_stopping_rounds=100), seed=0)
    m.fit(X[:150], y[:150], X[150:], y[150:])
    staged = m.staged_predict_proba(X)
    np.testing.assert_allclose(staged[-1], m.predict_proba(X), rtol=1e-12)
    raw = m.intercept + m.cfg.learning_rate * sum(t.predict(X) for t in m.trees[:3])
    np.testing.assert_allclose(staged[3], sigmoid(raw), rtol=1e-12)
    # trees are cut back to the round with the lowest validation loss
    assert min(m.val_trace) == pytest.approx(log_loss(y[150:], m.predict_proba(X[150:])), rel=1e-12)


# ---------------------------------------------------------------- network


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)


def test_network_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 3))
    y = rng.random(12) < 0.5
    net = FeedForwardNetwork(TINY_NN, seed=0)
    net.init_params(3, rng)
    for k in ("b0", "b1", "bo"):
        net.params[k] = rng.normal(size=net.params[k].shape) * 0.1
    _, grads = net.loss_and_grads(X, y, train=True)
    h = 1e-6
    worst = 0.0
    for name, g in grads.items():
        p = net.params[name]
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up, _ = net.loss_and_grads(X, y, train=True)
            p[idx] = old - h
            down, _ = net.loss_and_grads(X, y, train=True)
            p[idx] = old
            worst = max(worst, float(_rel_err((up - down) / (2 * h), g[idx])))
    assert worst < 1e-4


def test_network_without_hidden_layers_is_logistic():
    X, y = blobs(gap=6.0)
    cfg = dataclasses.replace(TINY_NN, num_layers=0, lr=0.05, epochs=200, batch_size=200, l2_reg_1=0.0)
    net = FeedForwardNetwork(cfg, seed=0).fit(X, y)
    assert set(net.params) == {"Wo", "bo"}
    assert np.all(net.predict(X) == y)
    assert net.history["train_loss"][-1] < 0.05


def test_network_deterministic_without_dropout():
    X, y = xor(120)
    a = FeedForwardNetwork(TINY_NN, seed=3).fit(X, y)
    b = FeedForwardNetwork(TINY_NN, seed=3).fit(X, y)
    assert a.history["train_loss"] == b.history["train_loss"]


def test_network_eval_mode_stable():
    X, y = xor(120)
    net = FeedForwardNetwork(dataclasses.replace(TINY_NN, dropout_1=0.3), seed=1).fit(X, y)
    np.testing.assert_array_equal(net.predict_proba(X), net.predict_proba(X))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_network_nonfinite_loss():
    X, y = xor(64)
    X[0, 0] = np.inf
    with pytest.raises(LearnerError, match="learning rate"):
        FeedForwardNetwork(TINY_NN, seed=0).fit(X, y)


# ---------------------------------------------------------------- contract and persistence


@pytest.mark.parametrize("kind,params", [("rf", {"n_estimators": 20}), ("gbt", {"n_estimators": 20}),
                                         ("nn", dataclasses.asdict(TINY_NN))])
def test_predict_is_thresholded_proba(kind, params):
    X, y = xor(150)
    m = make_model(kind, params, seed=0).fit(X, y, X[:50], y[:50])
    p = m.predict_proba(X)
    assert np.all((p >= 0) & (p <= 1))
    for thr in (0.0, 0.3, 0.5, 0.9):
        np.testing.assert_array_equal(m.predict(X, thr), p > thr)


@pytest.mark.parametrize("kind,params", [("rf", {"n_estimators": 20}), ("gbt", {"n_estimators": 20}),
                                         ("nn", dataclasses.asdict(TINY_NN))])
def test_artifact_round_trip(tmp_path, kind, params):
    X, y = xor(150)
    m = make_model(kind, params, seed=4).fit(X, y, X[:50], y[:50])
    save_model(m, tmp_path / "m.json", X[:10])
    back = load_model(tmp_path / "m.json")
    probe = np.random.default_rng(9).uniform(-1, 1, size=(40, 2))
    np.testing.assert_array_equal(back.predict_proba(probe), m.predict_proba(probe))
    assert back.seed == 4 and back.config_dict() == m.config_dict()


def test_tampered_artifact_rejected():
    X, y = xor(100)
    d = model_to_dict(GradientBoostedTrees(GBTConfig(n_estimators=10)).fit(X, y), X[:5])
    d = json.loads(json.dumps(d))
    d["params"]["intercept"] += 1e-9
    with pytest.raises(ArtifactError):
        model_from_dict(d)
    with pytest.raises(ArtifactError):
        model_from_dict({**d, "version": 99})


def test_spaces():
    check_space("rf", dataclasses.asdict(RFConfig()))
    assert space_violations("nn", {"units_1": 64, "units_i": 128, "num_layers": 2}) == ["units_i=128"]
    assert space_violations("nn", {"units_1": 64, "units_i": 128, "num_layers": 1}) == []
    with pytest.raises(ValueError, match="max_depth"):
        check_space("gbt", {"max_depth": 50})
    rng = np.random.default_rng(0)
    for kind, sp in SPACES.items():
        for d in sp.dims:
            for u in rng.random(20):
                assert d.contains(d.from_unit(u))
