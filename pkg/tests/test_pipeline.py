import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from riskwindow.pipeline import (
    Datasets,
    FeatureSelectionState,
    Imputer,
    SplitError,
    SplitSpec,
    assign_drivers,
    exact_shapley,
    group_split,
    oversample,
    reselect_reason,
    select_features,
    shapley_values,
    should_reselect,
    smote,
    split_indices,
    wasserstein_1d,
    write_selection_report,
)

# ---------------------------------------------------------------- splitting


def test_ten_equal_drivers():
    counts = {f"D{i}": 100 for i in range(10)}
    parts = assign_drivers(counts, SplitSpec())
    sizes = {p: sum(1 for v in parts.values() if v == p) for p in ("train", "val", "test")}
    assert sizes["train"] == 7
    assert sizes["val"] in (1, 2) and sizes["test"] in (1, 2)
    assert set(parts) == set(counts)


def test_too_few_drivers():
    with pytest.raises(SplitError):
        assign_drivers({"D1": 10}, SplitSpec())
    with pytest.raises(SplitError):
        assign_drivers({"D1": 10, "D2": 5}, SplitSpec())


def test_three_drivers_fill_every_partition():
    parts = assign_drivers({"A": 100, "B": 1, "C": 1}, SplitSpec())
    assert sorted(parts.values()) == ["test", "train", "val"]


def test_bad_fractions():
    with pytest.raises(ValueError, match="sum to 1"):
        SplitSpec(0.9, 0.2, 0.1)
    with pytest.raises(ValueError):
        SplitSpec(1.0, 0.0, 0.0)


@settings(max_examples=30)
@given(st.dictionaries(st.text("ABCD123", min_size=1, max_size=4), st.integers(1, 500), min_size=3, max_size=25),
       st.integers(0, 10_000))
def test_assignment_ignores_insertion_order(counts, seed):
    spec = SplitSpec(seed=seed)
    a = assign_drivers(counts, spec)
    b = assign_drivers(dict(reversed(list(counts.items()))), spec)
    assert a == b


def test_group_split_partitions_rows(table_small):
    tr, va, te = group_split(table_small, SplitSpec(seed=2))
    assert len(tr) + len(va) + len(te) == len(table_small)
    sets = [set(p.driver) for p in (tr, va, te)]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    for part in (tr, va, te):
        keys = list(zip(part.driver, part.trip, part.t))
        assert keys == sorted(keys, key=lambda k: (int(k[0][1:]), k[1], k[2]))


def test_split_ignores_row_order(table_small):
    perm = np.random.default_rng(0).permutation(len(table_small))
    a = split_indices(table_small, SplitSpec(seed=4))
    shuffled = table_small.take(perm)
    b = split_indices(shuffled, SplitSpec(seed=4))
    for p in a:
        assert set(table_small.driver[a[p]]) == set(shuffled.driver[b[p]])


def test_imputer_uses_training_medians():
    X = np.array([[1.0, np.nan], [3.0, 4.0], [np.nan, 6.0]])
    imp = Imputer.fit(X)
    np.testing.assert_array_equal(imp.fill, [2.0, 5.0])
    np.testing.assert_array_equal(imp.transform([[np.nan, np.nan]]), [[2.0, 5.0]])


# ---------------------------------------------------------------- SMOTE


def test_smote_midpoint():
    out = smote(np.array([[0.0, 0.0], [1.0, 1.0]]), 1, 4, seed=0, lam=0.5)
    np.testing.assert_array_equal(out, np.full((4, 2), 0.5))


def _on_segment(p, X):
    """Smallest distance from p to any segment between two rows of X."""
    best = math.inf
    for i in range(len(X)):
        for j in range(len(X)):
            a, b = X[i], X[j]
            d = b - a
            dd = float(d @ d)
            t = 0.0 if dd == 0 else min(max(float((p - a) @ d) / dd, 0.0), 1.0)
            best = min(best, float(np.linalg.norm(p - (a + t * d))))
    return best


def test_smote_points_lie_on_segments():
    X = np.random.default_rng(1).normal(size=(15, 3))
    out = smote(X, 3, 40, seed=2)
    assert max(_on_segment(p, X) for p in out) < 1e-9


def test_smote_copies_categorical_columns():
    rng = np.random.default_rng(3)
    X = np.column_stack([rng.normal(size=12), rng.integers(0, 2, 12)])
    out = smote(X, 2, 30, seed=0, categorical=[1])
    assert set(out[:, 1]) <= {0.0, 1.0}


def test_smote_too_few_rows_duplicates(caplog):
    X = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = smote(X, 5, 6, seed=0)
    assert all(any((row == x).all() for x in X) for row in out)
    assert "duplicating" in caplog.text


def test_oversample_balances_exactly():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 2))
    y = np.arange(100) < 17
    Xo, yo = oversample(X, y, k_neighbors=5, seed=1)
    assert yo.sum() == (~yo).sum() == 83
    np.testing.assert_array_equal(Xo[:100], X)


def test_datasets_smote_only_on_train(table_small):
    ds = Datasets.build(table_small, SplitSpec(seed=1))
    before = {p: getattr(ds, p).features.copy() for p in ("val", "test")}
    X, y = ds.training_arrays(ds.train.truth)
    assert ds.stages == ["split", "impute", "smote:train"]
    assert y.sum() == (~y).sum()
    assert len(X) >= len(ds.train)
    for p, f in before.items():
        np.testing.assert_array_equal(getattr(ds, p).features, f)


# ---------------------------------------------------------------- Shapley


def test_constant_model_has_zero_attribution():
    rng = np.random.default_rng(0)
    res = shapley_values(lambda Z: np.full(len(Z), 0.3), rng.random((10, 3)), rng.random((5, 3)), 20)
    assert np.all(np.abs(res.scores) < 0.01)


def test_symmetric_features_score_equally():
    rng = np.random.default_rng(0)
    bg = (rng.random((40, 3)) < 0.5).astype(float)
    ex = (rng.random((60, 3)) < 0.5).astype(float)
    res = shapley_values(lambda Z: Z[:, 0] * Z[:, 1], bg, ex, 200, seed=1)
    assert abs(res.scores[0] - res.scores[1]) < 0.02
    assert res.scores[2] == 0.0


def _model4(Z):
    return 1.0 / (1.0 + np.exp(-(1.5 * Z[:, 0] - Z[:, 1] + 0.8 * Z[:, 2] * Z[:, 3])))


def test_mc_matches_exact_enumeration():
    rng = np.random.default_rng(5)
    bg, ex = rng.normal(size=(20, 4)), rng.normal(size=(6, 4))
    res = shapley_values(_model4, bg, ex, 300, seed=2)
    for i, x in enumerate(ex):
        exact = exact_shapley(_model4, bg, x)
        assert np.all(np.abs(res.phi[i] - exact) <= 3 * res.se[i] + 1e-9)
        # efficiency: attributions add up to f(x) minus the background mean
        assert exact.sum() == pytest.approx(_model4(x[None])[0] - res.base_value, abs=1e-12)
        assert res.phi[i].sum() == pytest.approx(_model4(x[None])[0] - res.base_value, abs=1e-12)


def test_shapley_input_checks():
    with pytest.raises(ValueError):
        shapley_values(_model4, np.zeros((2, 4)), np.zeros((2, 4)), 0)
    with pytest.raises(ValueError):
        shapley_values(_model4, np.zeros((0, 4)), np.zeros((2, 4)), 3)


# ---------------------------------------------------------------- Wasserstein


def test_wasserstein_examples():
    assert wasserstein_1d([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == 0.0
    assert wasserstein_1d([0.0], [1.0]) == 1.0
    assert wasserstein_1d([0.0, 1.0], [0.5, 1.5]) == 0.5
    with pytest.raises(ValueError):
        wasserstein_1d([], [1.0])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.lists(st.floats(-100, 100), min_size=1, max_size=30))
def test_wasserstein_matches_scipy(a, b):
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_distance(a, b), rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------- feature selection


class _Linear:
    def __init__(self, w):
        self.w = np.asarray(w, dtype=float)

    def predict_proba(self, X):
        return np.asarray(X) @ self.w


def _fresh(names=("a", "b", "c")):
    return FeatureSelectionState(candidates=names, categorical=frozenset())


def test_select_keeps_features_above_cut():
    X = np.random.default_rng(0).normal(size=(200, 3))
    st_ = select_features(_fresh(), _Linear([1.0, 0.5, 0.0]), X, tau=0.5)
    assert st_.selected == ("a", "b")
    assert st_.scores["c"] == 0.0
    assert st_.last_tau == 0.5 and st_.snapshot.shape == (200, 3)


def test_select_singleton_when_everything_is_tiny():
    X = np.random.default_rng(0).normal(size=(100, 3))
    st_ = select_features(_fresh(), _Linear([0.0, 1.0, 0.0]), X)
    assert st_.selected == ("b",)


def test_select_all_zero_keeps_top_one(caplog):
    X = np.random.default_rng(0).normal(size=(50, 2))
    st_ = select_features(_fresh(("a", "b")), _Linear([0.0, 0.0]), X)
    assert len(st_.selected) == 1
    assert "keeping" in caplog.text


def test_select_deterministic():
    X = np.random.default_rng(0).normal(size=(100, 3))
    m = _Linear([1.0, 0.02, 0.3])
    a = select_features(_fresh(), m, X, seed=3)
    b = select_features(_fresh(), m, X, seed=3)
    assert a.selected == b.selected and a.scores == b.scores


def _drift_state():
    return FeatureSelectionState(candidates=("a",), categorical=frozenset(), last_tau=0.5, mean=np.zeros(1),
                                 std=np.ones(1), snapshot=np.zeros((4, 1)))


@pytest.mark.parametrize("new_tau,shift,want", [(0.505, 0.01, False), (0.52, 0.0, True), (0.5, 0.05, False),
                                                 (0.5, 0.06, True)])
def test_should_reselect(new_tau, shift, want):
    assert should_reselect(_drift_state(), new_tau, np.full((4, 1), shift)) is want


def test_reselect_reasons(tmp_path):
    assert reselect_reason(_drift_state(), 0.6, np.zeros((4, 1))) == "tau"
    assert reselect_reason(_drift_state(), None, np.ones((4, 1))) == "drift:a"
    assert reselect_reason(_fresh(), 0.5, np.zeros((4, 3))) == "initial"
    X = np.random.default_rng(0).normal(size=(40, 3))
    st_ = select_features(_fresh(), _Linear([1.0, 0.5, 0.0]), X)
    write_selection_report(st_, tmp_path / "s.csv", "config_hash=x seed=0")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[1] == "feature,score,selected,trigger_reason,timestamp"
    assert len(lines) == 5
