"""Synthetic trend protocol, window sweep and forecast scoring."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from threatprio.errors import InvalidParams, TooShort
from threatprio.evaluation import (
    Trend,
    TrendParams,
    classify_trend,
    evaluate_forecasts,
    generate_series,
    load_dilution_case,
    synthetic_forecast_cases,
    window_sweep,
)
from threatprio.evaluation.trends import relative_slope

T0 = datetime(2023, 1, 1, tzinfo=timezone.utc)


def series_of(values):
    return [(T0 + timedelta(days=30 * i), v) for i, v in enumerate(values)]


# -- classifier ---------------------------------------------------------------------------

def test_linear_increase_is_monotonic():
    assert classify_trend(series_of([0.1 + 0.01 * i for i in range(10)])) is Trend.MONOTONIC


def test_constant_is_stable():
    assert classify_trend(series_of([0.2] * 10)) is Trend.STABLE


def test_single_tenfold_step_is_abrupt():
    assert classify_trend(series_of([0.01] * 5 + [0.1] * 5)) is Trend.ABRUPT


def test_tenfold_drop_is_abrupt():
    assert classify_trend(series_of([0.1] * 4 + [0.01] * 6)) is Trend.ABRUPT


def test_thresholds_are_respected():
    # a 3x step is not above the factor; 3.1x is
    assert classify_trend(series_of([0.1, 0.1, 0.3, 0.3]), slope_band=10) is Trend.STABLE
    assert classify_trend(series_of([0.1, 0.1, 0.31, 0.31])) is Trend.ABRUPT
    flat_ish = series_of([0.2, 0.205, 0.21, 0.205, 0.2])
    assert relative_slope(flat_ish) < 0.10
    assert classify_trend(flat_ish) is Trend.STABLE


def test_too_short():
    with pytest.raises(TooShort):
        classify_trend(series_of([0.1, 0.2]))


# -- generator ------------------------------------------------------------------------------

def test_stable_without_noise_is_constant():
    values = [v for _, v in generate_series("stable", {"noise": 0.0, "level": 0.07}, seed=4)]
    assert values == [0.07] * 12


def test_same_seed_same_series():
    assert generate_series("monotonic", None, 9) == generate_series("monotonic", None, 9)
    assert generate_series("monotonic", None, 9) != generate_series("monotonic", None, 10)


def test_abrupt_jump_factor_ten_classified_abrupt():
    assert classify_trend(generate_series(Trend.ABRUPT, {"jump_factor": 10}, seed=1)) is Trend.ABRUPT


@pytest.mark.parametrize("trend", list(Trend))
def test_round_trip_hundred_seeds(trend):
    failures = [s for s in range(100) if classify_trend(generate_series(trend, None, s)) is not trend]
    assert failures == []


@settings(max_examples=150, deadline=None)
@given(
    trend=st.sampled_from(list(Trend)),
    n=st.integers(6, 24),
    level=st.floats(0.005, 0.08),
    noise=st.floats(0.0, 0.05),
    change=st.floats(0.3, 5.0),
    decreasing=st.booleans(),
    jump=st.one_of(st.floats(4.0, 12.0), st.floats(0.05, 0.25)),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_for_in_range_params(trend, n, level, noise, change, decreasing, jump, seed):
    params = TrendParams(n=n, level=level, noise=noise, change=change, decreasing=decreasing, jump_factor=jump)
    try:
        series = generate_series(trend, params, seed)
    except InvalidParams:
        assume(False)
    assert classify_trend(series) is trend


@pytest.mark.parametrize("trend,params", [
    ("stable", {"n": 2}),
    ("stable", {"noise": 0.2}),
    ("stable", {"level": 0.0}),
    ("monotonic", {"change": 0.1}),
    ("monotonic", {"change": 5.0, "n": 3}),
    ("abrupt", {"jump_factor": 2.0}),
    ("abrupt", {"jump_at": 0}),
    ("abrupt", {"level": 0.5, "jump_factor": 10}),
    ("sideways", None),
    ("stable", {"wobble": 1}),
])
def test_invalid_params(trend, params):
    with pytest.raises(InvalidParams):
        generate_series(trend, params, 0)


def test_noise_bound_holds():
    for seed in range(20):
        values = [v for _, v in generate_series("stable", {"noise": 0.03, "level": 0.1}, seed)]
        assert all(abs(v / 0.1 - 1) <= 0.03 + 1e-12 for v in values)


# -- forecast cases and scoring ---------------------------------------------------------------

def test_synthetic_cases_are_reproducible_and_labelled():
    a = synthetic_forecast_cases(4, seed=3)
    b = synthetic_forecast_cases(4, seed=3)
    assert a == b
    assert len(a) == 12
    for case in a:
        assert classify_trend(case.series) is case.trend
        assert all(e.at <= case.series[-1][0] for e in case.events)


def test_evaluate_forecasts_shape():
    scores = evaluate_forecasts(synthetic_forecast_cases(2, seed=1))
    assert [s.trend for s in scores] == list(Trend)
    for s in scores:
        assert s.cases == 2
        assert s.rmse >= 0 and 0 <= s.dir_acc <= 1


# -- window sweep -------------------------------------------------------------------------------

def test_single_window_single_row():
    rows = window_sweep(load_dilution_case(), ["1y"])
    assert len(rows) == 1 and rows[0].window == "1y"


def test_four_window_protocol_shape():
    rows = window_sweep(load_dilution_case(), ["0.5y", "1y", "2y", "3y"])
    assert [r.window for r in rows] == ["0.5y", "1y", "2y", "3y"]
    assert [r.years for r in rows] == [0.5, 1.0, 2.0, 3.0]
    assert all(r.points == 12 for r in rows)


def test_dilution_effect():
    rows = {r.window: r.rmse for r in window_sweep(load_dilution_case(), ["1y", "2y", "3y"])}
    assert rows["1y"] <= rows["2y"] <= rows["3y"]
    assert rows["3y"] >= rows["1y"]


def test_sweep_needs_windows():
    with pytest.raises(ValueError):
        window_sweep(load_dilution_case(), [])


def test_sweep_is_deterministic_across_worker_counts():
    case = load_dilution_case()
    assert window_sweep(case, ["0.5y", "1y", "2y", "3y"], max_workers=1) == \
        window_sweep(case, ["0.5y", "1y", "2y", "3y"], max_workers=4)
