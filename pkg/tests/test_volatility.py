import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvquant.errors import GapError, InsufficientData, InvalidPrice, NonPositiveValue
from rvquant.synthetic import gbm_prices
from rvquant.volatility import (
    IntradayDay,
    RVSeries,
    build_rv_series,
    compute_daily_rv,
    feature_vector,
    log_transform,
    read_intraday_csv,
    read_rv_csv,
    rv_series_from_daily,
    write_rv_csv,
)

D0 = np.datetime64("2020-01-01", "D")


def _days(rvs, start=D0):
    # price path whose only return is sqrt(rv), so the day's RV is rv
    return [IntradayDay(start + i, [1.0, math.exp(math.sqrt(r))]) for i, r in enumerate(rvs)]


def test_constant_prices_give_zero():
    assert compute_daily_rv([100.0, 100.0, 100.0]) == 0.0


def test_two_known_returns():
    p = [1.0, math.exp(0.01), math.exp(-0.01)]
    assert compute_daily_rv(p) == pytest.approx(5.0e-4, rel=1e-12)


def test_gbm_path_matches_high_precision_oracle():
    p = gbm_prices(288, seed=3)
    mpmath.mp.dps = 50
    oracle = mpmath.fsum(
        (mpmath.log(mpmath.mpf(float(b))) - mpmath.log(mpmath.mpf(float(a)))) ** 2 for a, b in zip(p[:-1], p[1:])
    )
    got = compute_daily_rv(IntradayDay(D0, p))
    assert abs(got - float(oracle)) <= 1e-15 * float(oracle)


def test_rv_errors():
    with pytest.raises(InsufficientData):
        compute_daily_rv([1.0])
    with pytest.raises(InvalidPrice):
        compute_daily_rv([1.0, 0.0, 2.0])
    with pytest.raises(InvalidPrice):
        compute_daily_rv([1.0, -3.0])


@given(st.lists(st.floats(0.01, 1e6), min_size=2, max_size=40), st.floats(1e-3, 1e3))
def test_rv_scale_invariant(prices, alpha):
    a = compute_daily_rv(prices)
    b = compute_daily_rv(np.asarray(prices) * alpha)
    assert a >= 0
    assert b == pytest.approx(a, rel=1e-9, abs=1e-24)


def test_constant_series_aggregates():
    s = build_rv_series(_days([0.0004] * 40))
    assert np.allclose(s.rv_w[7:], 0.0004, rtol=1e-12)
    assert np.allclose(s.rv_m[30:], 0.0004, rtol=1e-12)
    assert np.all(np.isnan(s.rv_w[:7])) and np.all(np.isnan(s.rv_m[:30]))


def test_ramp_weekly_mean():
    s = rv_series_from_daily(D0 + np.arange(40), np.arange(1, 41, dtype=float))
    # day 8 (position 7) averages days 1..7
    assert s.rv_w[7] == 4.0


def test_trailing_windows_match_naive_loop():
    rng = np.random.default_rng(0)
    x = rng.exponential(size=120)
    s = rv_series_from_daily(D0 + np.arange(120), x)
    for t in range(120):
        w = sum(x[t - 7 : t]) / 7 if t >= 7 else np.nan
        m = sum(x[t - 30 : t]) / 30 if t >= 30 else np.nan
        np.testing.assert_allclose(s.rv_w[t], w, rtol=1e-14)
        np.testing.assert_allclose(s.rv_m[t], m, rtol=1e-14)


def test_gap_rejected():
    days = _days([1e-4] * 5)
    days[3] = IntradayDay(D0 + 10, [1.0, 1.01])
    with pytest.raises(GapError):
        build_rv_series(days)


def test_short_days_warned():
    days = [IntradayDay(D0 + i, [1.0, 1.01, 1.02], missing_bars=i % 2) for i in range(4)]
    with pytest.warns(UserWarning):
        s = build_rv_series(days)
    assert s.short_days == 2


def test_log_transform_values():
    s = rv_series_from_daily(D0 + np.arange(3), [1.0, math.e, 2.0])
    ls = log_transform(s)
    assert ls.scale == "log"
    assert ls.rv_d[0] == 0.0
    assert ls.rv_d[1] == pytest.approx(1.0, abs=1e-15)


def test_log_roundtrip():
    rng = np.random.default_rng(1)
    s = rv_series_from_daily(D0 + np.arange(60), rng.exponential(1e-4, 60))
    ls = log_transform(s)
    np.testing.assert_allclose(np.exp(ls.rv_d), s.rv_d, rtol=1e-12)
    np.testing.assert_allclose(np.exp(ls.rv_m[30:]), s.rv_m[30:], rtol=1e-12)


def test_log_rejects_zero():
    s = rv_series_from_daily(D0 + np.arange(3), [1.0, 0.0, 2.0])
    with pytest.raises(NonPositiveValue):
        log_transform(s)


def test_feature_vector_constant():
    s = rv_series_from_daily(D0 + np.arange(40), np.full(40, 3.0))
    np.testing.assert_allclose(feature_vector(s, 35), [3.0, 3.0, 3.0])


def test_feature_vector_log_scale_consistent():
    rng = np.random.default_rng(2)
    s = rv_series_from_daily(D0 + np.arange(50), rng.exponential(1.0, 50))
    np.testing.assert_allclose(feature_vector(log_transform(s), 40), np.log(feature_vector(s, 40)), rtol=1e-12)


def test_feature_vector_ramp_by_hand():
    x = np.arange(1, 41, dtype=float)
    s = rv_series_from_daily(D0 + np.arange(40), x)
    # t = 32 (1-based day 32, position 31): lag row is position 30, which
    # holds rv_d = 31, weekly mean of 24..30, monthly mean of 1..30
    got = feature_vector(s, D0 + 31)
    np.testing.assert_allclose(got, [31.0, 27.0, 15.5])


def test_feature_vector_needs_history():
    s = rv_series_from_daily(D0 + np.arange(40), np.ones(40))
    with pytest.raises(InsufficientData):
        feature_vector(s, 30)
    feature_vector(s, 31)


def test_no_look_ahead_in_features():
    rng = np.random.default_rng(4)
    x = rng.exponential(size=80)
    base = rv_series_from_daily(D0 + np.arange(80), x).features()
    y = x.copy()
    y[50] *= 100
    bumped = rv_series_from_daily(D0 + np.arange(80), y).features()
    np.testing.assert_array_equal(base[:51], bumped[:51])
    assert not np.array_equal(base[51], bumped[51])


def test_intraday_csv_to_rv_csv_roundtrip(tmp_path):
    src = tmp_path / "prices.csv"
    lines = ["timestamp,price"]
    for d in range(3):
        p = gbm_prices(12, seed=d)
        for k, v in enumerate(p[:-1]):
            lines.append(f"2021-03-0{d + 1}T{k:02d}:00:00Z,{float(v)!r}")
    src.write_text("\n".join(lines) + "\n")
    days = read_intraday_csv(src, expected_bars=12)
    assert [len(d.prices) for d in days] == [12, 12, 12]
    s = build_rv_series(days)
    out = tmp_path / "rv.csv"
    write_rv_csv(s, out)
    assert out.read_text().splitlines()[0] == "date,rv_d,rv_w,rv_m"
    back = read_rv_csv(out)
    np.testing.assert_array_equal(back.rv_d, s.rv_d)
    assert np.all(np.isnan(back.rv_w))


def test_rv_csv_exact_17_digits(tmp_path):
    rng = np.random.default_rng(6)
    s = rv_series_from_daily(D0 + np.arange(45), rng.exponential(1e-4, 45))
    write_rv_csv(s, tmp_path / "rv.csv")
    back = read_rv_csv(tmp_path / "rv.csv")
    np.testing.assert_array_equal(back.rv_d, s.rv_d)
    np.testing.assert_array_equal(back.rv_m[30:], s.rv_m[30:])


def test_unsorted_timestamps_rejected(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("timestamp,price\n2021-01-01T00:05:00Z,1\n2021-01-01T00:00:00Z,2\n")
    with pytest.raises(GapError):
        read_intraday_csv(f)


def test_series_rejects_gaps():
    with pytest.raises(GapError):
        RVSeries(np.array(["2020-01-01", "2020-01-03"], dtype="datetime64[D]"),
                 [1, 1], [np.nan] * 2, [np.nan] * 2)


@settings(max_examples=30)
@given(st.lists(st.floats(0, 1), min_size=31, max_size=60))
def test_aggregates_nonnegative(x):
    s = rv_series_from_daily(D0 + np.arange(len(x)), x)
    assert np.all(s.rv_w[7:] >= 0) and np.all(s.rv_m[30:] >= 0)
