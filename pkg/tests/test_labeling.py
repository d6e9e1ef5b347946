import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskwindow.labeling import (
    Clause,
    DegenerateFitError,
    HeadwayScoreParams,
    IndicatorMode,
    exceeds_threshold,
    fit_headway_params,
    harsh_label,
    harsh_labels,
    headway_score,
    headway_scores,
    label_records,
    label_table,
    speed_weight,
    unified_label,
    write_labels_csv,
    write_labels_jsonl,
)
from riskwindow.windowing import WindowView

FITTED = HeadwayScoreParams(s_low=30.0, s_high=90.0, sigma=0.1)


def view(obs=None, pred=None, speed=50.0, hdw=(0.0, 0.0, 0.0), hdw_pred=None):
    ev = {"h_a": 0.0, "h_b": 0.0, "h_c": 0.0, "hdw_2": 0.0, "hdw_3": 0.0}
    return WindowView(
        "D", "T", 4,
        {**ev, **(obs or {})},
        None if pred is None else {**ev, **pred},
        speed,
        dict(zip((1, 2, 3), hdw)),
        None if hdw_pred is None else dict(zip((1, 2, 3), hdw_pred)),
        0 if pred is None else 2,
    )


@pytest.mark.parametrize(
    "obs,pred,tau,want",
    [(0.4, 0.1, 0.5, False), (0.6, None, 0.5, True), (0.5, 0.5, 0.5, False), (0.2, 0.51, 0.5, True)],
)
def test_exceeds_threshold(obs, pred, tau, want):
    assert exceeds_threshold(obs, pred, tau) is want


def test_harsh_label_any_event():
    assert harsh_label(view({"h_c": 0.6}), 0.5)
    assert not harsh_label(view({"hdw_3": 1.0}), 0.5)  # headway is not a harsh event
    assert harsh_label(view(pred={"h_a": 1.0}), 0.5)
    assert not harsh_label(view(pred={"h_a": 1.0}), 0.5, Clause.OBS)
    assert not harsh_label(view({"h_a": 1.0}), 0.5, Clause.PRED)


def test_speed_weight_examples():
    assert speed_weight(20.0, 3, FITTED) == 0.0
    assert speed_weight(100.0, 3, FITTED) == 1.0
    assert speed_weight(60.0, 3, FITTED) == 0.5
    assert speed_weight(60.0, 1, FITTED) == pytest.approx(0.1)


def test_headway_score_examples():
    assert headway_score(view(speed=95.0), FITTED) == 0.0
    assert headway_score(view(speed=95.0, hdw=(0.1, 0.2, 0.1)), FITTED) == pytest.approx(0.22, abs=1e-12)


def test_doubling_alpha_doubles_score():
    v = view(speed=70.0, hdw=(0.2, 0.4, 0.2))
    twice = dataclasses.replace(FITTED, alpha=(0.4, 1.0, 2.0))
    assert headway_score(v, twice) == 2 * headway_score(v, FITTED)


def test_alpha_ordering_enforced():
    with pytest.raises(ValueError):
        HeadwayScoreParams(alpha=(0.5, 0.2, 1.0))
    with pytest.raises(ValueError):
        HeadwayScoreParams(p_low=90, p_high=10)


def test_unfitted_or_degenerate_params():
    with pytest.raises(DegenerateFitError):
        speed_weight(10.0, 1, HeadwayScoreParams())
    with pytest.raises(DegenerateFitError):
        speed_weight(10.0, 1, HeadwayScoreParams(s_low=5.0, s_high=5.0, sigma=0.0))


def test_unified_label_modes():
    harsh_only = view({"h_a": 1.0}, speed=10.0)
    lab = unified_label(harsh_only, 0.5, FITTED)
    assert lab.r_harsh and not lab.r_hdw and lab.r
    assert not unified_label(harsh_only, 0.5, FITTED, IndicatorMode.HEADWAY).r
    calm = view(speed=10.0)
    assert not unified_label(calm, 0.5, FITTED).r
    risky_hdw = view(speed=95.0, hdw=(0.0, 0.0, 0.6))
    assert unified_label(risky_hdw, 0.5, FITTED, "headway").r
    assert not unified_label(risky_hdw, 0.5, FITTED, "harsh").r


props = st.floats(0, 1, allow_nan=False)


@given(st.tuples(props, props, props), st.tuples(props, props, props), props, props)
def test_monotone_in_tau(obs, pred, t1, t2):
    v = view(dict(zip(("h_a", "h_b", "h_c"), obs)), dict(zip(("h_a", "h_b", "h_c"), pred)))
    lo, hi = min(t1, t2), max(t1, t2)
    assert harsh_label(v, hi) <= harsh_label(v, lo)


@given(st.tuples(props, props, props), st.floats(0, 200), st.floats(0, 200))
def test_monotone_in_speed(hdw, v1, v2):
    lo, hi = min(v1, v2), max(v1, v2)
    assert headway_score(view(speed=lo, hdw=hdw), FITTED) <= headway_score(view(speed=hi, hdw=hdw), FITTED)


@pytest.mark.parametrize("c", [0.5, 2.0, 8.0])
def test_rescaling_alpha_and_sigma(table_small, c):
    # powers of two keep the products exact, so the comparison is exact too
    hp = fit_headway_params(table_small)
    scaled = dataclasses.replace(hp, alpha=tuple(a * c for a in hp.alpha), sigma=hp.sigma * c)
    np.testing.assert_array_equal(label_table(table_small, 0.5, hp, "headway"), label_table(table_small, 0.5, scaled, "headway"))


def test_fit_on_training_rows(table_small):
    hp = fit_headway_params(table_small, p_low=10, p_high=90, sigma_quantile=0.85)
    lo, hi = np.percentile(table_small.mean_speed, [10, 90])
    assert (hp.s_low, hp.s_high) == (lo, hi)
    frac = np.mean(headway_scores(table_small, hp) > hp.sigma)
    # linear quantile interpolation can leave at most one extra row above sigma
    assert frac <= 0.15 + 1.0 / len(table_small)
    back = HeadwayScoreParams.from_json(hp.to_json())
    assert back == hp


def test_fit_degenerate(table_small):
    flat = table_small.take(np.arange(10))
    flat.mean_speed = np.full(10, 50.0)
    with pytest.raises(DegenerateFitError):
        fit_headway_params(flat)


def test_table_and_view_labels_agree(table_small):
    hp = fit_headway_params(table_small)
    for mode in IndicatorMode:
        for tau in (0.2, 0.5):
            vec = label_table(table_small, tau, hp, mode)
            scalar = [unified_label(v, tau, hp, mode).r for v in table_small.views()]
            assert vec.tolist() == scalar


def test_per_window_tau(table_small):
    tau = np.where(np.arange(len(table_small)) % 2 == 0, 0.1, 0.9)
    got = harsh_labels(table_small, tau)
    want = np.where(tau == 0.1, harsh_labels(table_small, 0.1), harsh_labels(table_small, 0.9))
    np.testing.assert_array_equal(got, want)


def test_headway_mode_needs_params(table_small):
    with pytest.raises(ValueError):
        label_table(table_small, 0.5, None, "headway")


def test_label_exports(tmp_path, table_small):
    sub = table_small.take(np.arange(5))
    hp = fit_headway_params(table_small)
    labs = label_records(sub, 0.5, hp)
    write_labels_csv(labs, tmp_path / "l.csv")
    write_labels_jsonl(labs, tmp_path / "l.jsonl")
    assert len((tmp_path / "l.csv").read_text().splitlines()) == 6
    first = json.loads((tmp_path / "l.jsonl").read_text().splitlines()[0])
    assert first["r"] == (first["r_harsh"] or first["r_hdw"])


def test_labels_deterministic(table_small):
    hp = fit_headway_params(table_small)
    a = label_table(table_small, 0.3, hp)
    b = label_table(table_small, 0.3, hp)
    np.testing.assert_array_equal(a, b)
