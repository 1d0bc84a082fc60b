"""Realized variance and the HAR-style aggregate features built from it.

The daily realized variance is the sum of squared intraday log-returns.
Weekly and monthly aggregates are trailing means over the 7 and 30 days
*before* each date, so a feature row for day ``t`` only ever sees data up
to ``t - 1``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Sequence

import numpy as np

from .errors import GapError, InsufficientData, InvalidPrice, NonPositiveValue

WEEK = 7
MONTH = 30
ONE_DAY = np.timedelta64(1, "D")


@dataclass(frozen=True)
class IntradayDay:
    """Chronological intraday prices for one calendar day."""

    date: np.datetime64
    prices: np.ndarray
    #: number of bars the feed was expected to deliver but did not
    missing_bars: int = 0

    def __post_init__(self):
        object.__setattr__(self, "date", np.datetime64(self.date, "D"))
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=float))


@dataclass
class RVSeries:
    """Gap-free daily series of realized variance and its trailing aggregates.

    ``rv_w`` and ``rv_m`` are NaN where fewer than 7 / 30 prior days exist.
    """

    dates: np.ndarray
    rv_d: np.ndarray
    rv_w: np.ndarray
    rv_m: np.ndarray
    scale: str = "raw"
    short_days: int = field(default=0, compare=False)

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.rv_d = np.asarray(self.rv_d, dtype=float)
        self.rv_w = np.asarray(self.rv_w, dtype=float)
        self.rv_m = np.asarray(self.rv_m, dtype=float)
        if self.scale not in ("raw", "log"):
            raise ValueError(f"scale must be 'raw' or 'log', got {self.scale!r}")
        n = len(self.dates)
        if not (len(self.rv_d) == len(self.rv_w) == len(self.rv_m) == n):
            raise ValueError("RVSeries columns must have equal length")
        if n > 1 and np.any(np.diff(self.dates) != ONE_DAY):
            raise GapError("RVSeries dates must be consecutive calendar days")

    def __len__(self):
        return len(self.dates)

    def index_of(self, day) -> int:
        day = np.datetime64(day, "D")
        i = int((day - self.dates[0]) / ONE_DAY) if len(self) else -1
        if i < 0 or i >= len(self):
            raise KeyError(f"{day} outside series range")
        return i

    def features(self) -> np.ndarray:
        """(T, 3) matrix whose row ``t`` is ``[rv_d, rv_w, rv_m]`` at ``t - 1``.

        Row 0 and any row lacking full history are NaN.
        """
        out = np.full((len(self), 3), np.nan)
        out[1:, 0] = self.rv_d[:-1]
        out[1:, 1] = self.rv_w[:-1]
        out[1:, 2] = self.rv_m[:-1]
        return out


def compute_daily_rv(day) -> float:
    """Sum of squared log-returns over one day's price path.

    Parameters
    ----------
    day : IntradayDay or array_like
        Strictly positive prices in time order. The first price is the base
        of the first return; overnight moves are not included.

    Returns
    -------
    float
    """
    prices = day.prices if isinstance(day, IntradayDay) else np.asarray(day, dtype=float)
    if prices.ndim != 1 or prices.size < 2:
        raise InsufficientData("need at least 2 prices to form a return")
    if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
        raise InvalidPrice("prices must be finite and strictly positive")
    ratio = prices[1:] / prices[:-1]
    # log1p of the relative change keeps full precision for small returns;
    # large moves go through the ratio to avoid cancellation near -1
    small = np.abs(ratio - 1.0) < 0.5
    r = np.where(small, np.log1p(np.diff(prices) / prices[:-1]), np.log(ratio))
    return math.fsum(r * r)


def _trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    out = np.full(x.shape, np.nan)
    for t in range(window, len(x)):
        out[t] = math.fsum(x[t - window : t]) / window
    return out


def rv_series_from_daily(dates, rv_d, scale: str = "raw") -> RVSeries:
    """Attach trailing weekly/monthly means to a raw daily RV vector."""
    rv_d = np.asarray(rv_d, dtype=float)
    if np.any(rv_d < 0):
        raise NonPositiveValue("raw realized variance cannot be negative")
    return RVSeries(
        dates=dates,
        rv_d=rv_d,
        rv_w=_trailing_mean(rv_d, WEEK),
        rv_m=_trailing_mean(rv_d, MONTH),
        scale=scale,
    )


def build_rv_series(days: Sequence[IntradayDay]) -> RVSeries:
    """Compute RV per day and the lagged 7/30-day aggregates.

    Days must be contiguous calendar days in ascending order. Days that are
    missing intraday bars are kept as long as two prices remain; their count
    is stored on ``RVSeries.short_days`` and reported with a warning.
    """
    if len(days) == 0:
        raise InsufficientData("no days supplied")
    dates = np.array([d.date for d in days], dtype="datetime64[D]")
    if len(dates) > 1 and np.any(np.diff(dates) != ONE_DAY):
        bad = int(np.flatnonzero(np.diff(dates) != ONE_DAY)[0])
        raise GapError(f"dates not contiguous between {dates[bad]} and {dates[bad + 1]}")
    rv = np.array([compute_daily_rv(d) for d in days])
    short = sum(1 for d in days if d.missing_bars > 0)
    if short:
        warnings.warn(f"{short} day(s) have missing intraday bars", stacklevel=2)
    series = rv_series_from_daily(dates, rv)
    series.short_days = short
    return series


def log_transform(series: RVSeries) -> RVSeries:
    """Elementwise natural log of every RV column."""
    if series.scale == "log":
        raise ValueError("series is already log-scaled")
    cols = (series.rv_d, series.rv_w, series.rv_m)
    for c in cols:
        defined = c[~np.isnan(c)]
        if np.any(defined <= 0):
            raise NonPositiveValue("log of non-positive realized variance")
    with np.errstate(invalid="ignore"):
        logs = [np.log(c) for c in cols]
    return RVSeries(series.dates, *logs, scale="log", short_days=series.short_days)


def feature_vector(series: RVSeries, t) -> np.ndarray:
    """The triple ``[rv_d, rv_w, rv_m]`` observed on the day before ``t``.

    ``t`` is either a date or an integer position in the series.
    """
    i = t if isinstance(t, (int, np.integer)) else series.index_of(t)
    if i < 1 or i > len(series):
        raise InsufficientData(f"no prior day for position {i}")
    x = np.array([series.rv_d[i - 1], series.rv_w[i - 1], series.rv_m[i - 1]])
    if np.any(np.isnan(x)):
        raise InsufficientData(f"fewer than {MONTH} days of history before position {i}")
    return x


# ---------------------------------------------------------------- file I/O


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def read_intraday_csv(path, expected_bars: int | None = None) -> list[IntradayDay]:
    """Group a ``timestamp,price`` CSV into per-day price paths.

    Timestamps are ISO-8601 UTC and must be ascending. When
    ``expected_bars`` is given, days with fewer prices are flagged as short.
    """
    by_day: dict[date, list[float]] = {}
    last = None
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["timestamp", "price"]:
            raise InsufficientData(f"{path}: expected header 'timestamp,price'")
        for lineno, row in enumerate(reader, start=2):
            ts = _parse_timestamp(row["timestamp"])
            if last is not None and ts <= last:
                raise GapError(f"{path}:{lineno}: timestamps not strictly ascending")
            last = ts
            by_day.setdefault(ts.date(), []).append(float(row["price"]))
    days = []
    for d, prices in by_day.items():
        missing = max(0, expected_bars - len(prices)) if expected_bars else 0
        days.append(IntradayDay(np.datetime64(d, "D"), np.array(prices), missing_bars=missing))
    return days


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else format(float(x), ".17g")


def write_rv_csv(series: RVSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "rv_d", "rv_w", "rv_m"])
        for i in range(len(series)):
            w.writerow([str(series.dates[i]), _fmt(series.rv_d[i]), _fmt(series.rv_w[i]), _fmt(series.rv_m[i])])


def read_rv_csv(path) -> RVSeries:
    dates, cols = [], ([], [], [])
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["date", "rv_d", "rv_w", "rv_m"]:
            raise InsufficientData(f"{path}: expected header 'date,rv_d,rv_w,rv_m'")
        for row in reader:
            dates.append(np.datetime64(row["date"], "D"))
            for c, key in zip(cols, ("rv_d", "rv_w", "rv_m")):
                c.append(float(row[key]) if row[key] != "" else np.nan)
    return RVSeries(np.array(dates, dtype="datetime64[D]"), *cols)

