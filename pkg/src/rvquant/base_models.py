"""Point-forecast base models and the forecast panel they feed.

Only the linear HAR family is fitted here: plain HAR (OLS), HAR-R (Huber
IRLS), ridge and LASSO on the HAR regressors. Forecasts from any other
model enter through :func:`ingest_panel`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimError,
    DuplicateDate,
    InsufficientData,
    MissingData,
    NonConvergent,
    RankDeficient,
)
from .volatility import ONE_DAY, RVSeries

LAMBDA_GRID = 10.0 ** np.linspace(-6, 2, 25)
HUBER_K = 1.345
BASE_MODELS = ("HAR", "HAR-R", "RR", "LASSO")


@dataclass
class LinearModel:
    """``a0 + sum_i a_i x_i``; ``coef[0]`` is the intercept."""

    coef: np.ndarray
    scale: str = "raw"
    fitted_on: tuple | None = None
    lam: float | None = None
    weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coef[1:]


def predict(model: LinearModel, x) -> float | np.ndarray:
    """Evaluate the model on one feature vector or a (T, m) matrix."""
    x = np.asarray(x, dtype=float)
    m = len(model.coef) - 1
    if x.shape[-1] != m:
        raise DimError(f"model expects {m} features, got {x.shape[-1]}")
    out = model.coef[0] + x @ model.coef[1:]
    return float(out) if x.ndim == 1 else out


# ------------------------------------------------------------ array solvers


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(X)), X])


def _check_rows(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) != len(y):
        raise DimError("X and y have different numbers of rows")
    # intercept + slopes, plus two residual degrees of freedom
    n_params = X.shape[1] + 1
    if len(y) < n_params + 2:
        raise InsufficientData(f"need at least {n_params + 2} rows, got {len(y)}")
    return X, y


def ols(X, y) -> np.ndarray:
    """Least squares with intercept via a QR factorization."""
    X, y = _check_rows(X, y)
    A = _with_intercept(X)
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.min() <= diag.max() * A.shape[0] * np.finfo(float).eps:
        raise RankDeficient("design matrix is rank deficient")
    return np.linalg.solve(R, Q.T @ y)


def huber(X, y, k: float = HUBER_K, tol: float = 1e-8, max_iter: int = 100):
    """Huber M-estimate by iteratively reweighted least squares.

    The residual scale is re-estimated each pass as MAD / 0.6745.

    Returns
    -------
    coef : ndarray
    weights : ndarray
        Final IRLS weights, each in (0, 1].
    """
    X, y = _check_rows(X, y)
    A = _with_intercept(X)
    beta = ols(X, y)
    w = np.ones(len(y))
    for _ in range(max_iter):
        r = y - A @ beta
        scale = np.median(np.abs(r - np.median(r))) / 0.6745
        # residuals at rounding level: the fit is exact, keep it
        if scale <= 64 * np.finfo(float).eps * max(1.0, np.max(np.abs(y))):
            return beta, np.ones(len(y))
        c = k * scale
        absr = np.abs(r)
        w = np.where(absr <= c, 1.0, c / np.maximum(absr, c))
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
        if np.max(np.abs(new - beta)) <= tol * max(1.0, np.max(np.abs(beta))):
            return new, w
        beta = new
    raise NonConvergent(f"Huber IRLS did not converge in {max_iter} iterations")


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd_safe = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd_safe, mu, sd_safe, sd > 0


def _unstandardize(b, mu, sd, ybar):
    slopes = b / sd
    return np.concatenate(([ybar - mu @ slopes], slopes))


def ridge(X, y, lam: float) -> np.ndarray:
    """Minimize ``(1/2n)||y - a0 - X a||^2 + (lam/2)||a||^2`` on standardized
    features; intercept unpenalized; coefficients on the original scale."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    X, y = _check_rows(X, y)
    Z, mu, sd, live = _standardize(X)
    Z[:, ~live] = 0.0
    n, m = Z.shape
    ybar = y.mean()
    G = Z.T @ Z / n + lam * np.eye(m)
    G[~live, ~live] = 1.0
    b = np.linalg.solve(G, Z.T @ (y - ybar) / n)
    return _unstandardize(b, mu, sd, ybar)


def lasso(X, y, lam: float, tol: float = 1e-10, max_sweeps: int = 100_000) -> np.ndarray:
    """Minimize ``(1/2n)||y - a0 - X a||^2 + lam ||a||_1`` by cyclic
    coordinate descent on standardized features."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    X, y = _check_rows(X, y)
    Z, mu, sd, live = _standardize(X)
    n, m = Z.shape
    ybar = y.mean()
    r = y - ybar
    b = np.zeros(m)
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(m):
            if not live[j]:
                continue
            old = b[j]
            rho = Z[:, j] @ r / n + old
            new = np.sign(rho) * max(abs(rho) - lam, 0.0)
            if new != old:
                r -= Z[:, j] * (new - old)
                b[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest <= tol:
            return _unstandardize(b, mu, sd, ybar)
    raise NonConvergent("coordinate descent hit the sweep limit")


def lasso_objective(X, y, coef, lam) -> float:
    """The LASSO objective in the standardized parametrization used by :func:`lasso`."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    r = y - coef[0] - X @ coef[1:]
    return float(r @ r / (2 * len(y)) + lam * np.sum(np.abs(coef[1:] * sd)))


def select_lambda(X, y, solver, grid: Sequence[float] = LAMBDA_GRID, holdout: float = 0.2) -> float:
    """Pick the grid value with the lowest MSE on the last ``holdout``
    fraction of rows, fitting on the rest."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty lambda grid")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    cut = int(round(len(y) * (1 - holdout)))
    Xa, ya, Xb, yb = X[:cut], y[:cut], X[cut:], y[cut:]
    if len(yb) == 0:
        raise InsufficientData("validation tail is empty")
    mses = []
    for lam in grid:
        coef = solver(Xa, ya, lam)
        err = yb - coef[0] - Xb @ coef[1:]
        mses.append(float(err @ err) / len(yb))
    return float(grid[int(np.argmin(mses))])


# ------------------------------------------------------ series-level fits


def har_design(series: RVSeries, window=None):
    """Rows of HAR regressors and targets whose target date lies in ``window``.

    ``window`` is an inclusive ``(start, end)`` pair of dates (either may be
    None). Rows without a full month of lagged history are dropped.

    Returns
    -------
    X : (T, 3) ndarray
    y : (T,) ndarray
    dates : (T,) datetime64 array
    """
    F = series.features()
    keep = ~np.isnan(F).any(axis=1)
    if window is not None:
        start, end = window
        if start is not None:
            keep &= series.dates >= np.datetime64(start, "D")
        if end is not None:
            keep &= series.dates <= np.datetime64(end, "D")
    return F[keep], series.rv_d[keep], series.dates[keep]


def _span(dates):
    return (dates[0], dates[-1]) if len(dates) else None


def fit_har(series: RVSeries, window=None) -> LinearModel:
    X, y, d = har_design(series, window)
    return LinearModel(ols(X, y), series.scale, _span(d))


def fit_har_robust(series: RVSeries, window=None) -> LinearModel:
    X, y, d = har_design(series, window)
    coef, w = huber(X, y)
    return LinearModel(coef, series.scale, _span(d), weights=w)


def fit_ridge(series: RVSeries, window=None, lam: float | str = "auto") -> LinearModel:
    X, y, d = har_design(series, window)
    if lam == "auto":
        lam = select_lambda(X, y, ridge)
    return LinearModel(ridge(X, y, float(lam)), series.scale, _span(d), lam=float(lam))


def fit_lasso(series: RVSeries, window=None, lam: float | str = "auto") -> LinearModel:
    X, y, d = har_design(series, window)
    if lam == "auto":
        lam = select_lambda(X, y, lasso)
    return LinearModel(lasso(X, y, float(lam)), series.scale, _span(d), lam=float(lam))


FITTERS = {
    "HAR": fit_har,
    "HAR-R": fit_har_robust,
    "RR": fit_ridge,
    "LASSO": fit_lasso,
}


# ------------------------------------------------------------- the panel


@dataclass
class ForecastPanel:
    """Date-indexed point forecasts of ``n`` models plus the realized target."""

    dates: np.ndarray
    models: list
    forecasts: np.ndarray
    actuals: np.ndarray
    scale: str = "raw"

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.forecasts = np.asarray(self.forecasts, dtype=float)
        self.actuals = np.asarray(self.actuals, dtype=float)
        self.models = list(self.models)
        if self.forecasts.ndim == 1:
            self.forecasts = self.forecasts[:, None]
        T, n = self.forecasts.shape
        if n < 1 or n != len(self.models):
            raise DimError("one forecast column per model name is required")
        if len(self.dates) != T or len(self.actuals) != T:
            raise DimError("dates, forecasts and actuals must align")
        if len(set(self.models)) != n:
            raise ValueError("model names must be unique")
        if T > 1:
            step = np.diff(self.dates)
            if np.any(step == np.timedelta64(0, "D")):
                raise DuplicateDate("panel contains duplicate dates")
            if np.any(step < np.timedelta64(0, "D")):
                raise ValueError("panel dates must be increasing")
        if self.scale not in ("raw", "log"):
            raise ValueError("scale must be 'raw' or 'log'")

    def __len__(self):
        return len(self.dates)

    def column(self, model: str) -> np.ndarray:
        return self.forecasts[:, self.models.index(model)]

    def position(self, day) -> int:
        i = int(np.searchsorted(self.dates, np.datetime64(day, "D")))
        if i >= len(self) or self.dates[i] != np.datetime64(day, "D"):
            raise KeyError(f"{day} not in panel")
        return i

    def head(self, stop: int) -> "ForecastPanel":
        return replace(self, dates=self.dates[:stop], forecasts=self.forecasts[:stop],
                       actuals=self.actuals[:stop], models=list(self.models))


def ensemble_forecasts(panel: ForecastPanel) -> ForecastPanel:
    """Append per-row mean and median of all columns as ``Ens-Mean`` / ``Ens-Med``."""
    F = panel.forecasts
    mean = F.mean(axis=1)
    med = np.median(F, axis=1)
    return ForecastPanel(
        panel.dates,
        panel.models + ["Ens-Mean", "Ens-Med"],
        np.column_stack([F, mean, med]),
        panel.actuals,
        panel.scale,
    )


def base_forecast_panel(series: RVSeries, start, end=None, models=BASE_MODELS,
                        lam: float | str = "auto", ensembles: bool = True) -> ForecastPanel:
    """One-step-ahead forecasts from an expanding window of all prior rows.

    For each day ``tau`` in ``[start, end]`` every model is refitted on the
    rows with target date before ``tau`` and evaluated on ``x_tau``.
    """
    F = series.features()
    end = series.dates[-1] if end is None else np.datetime64(end, "D")
    i0, i1 = series.index_of(start), series.index_of(end)
    out = np.empty((i1 - i0 + 1, len(models)))
    for row, i in enumerate(range(i0, i1 + 1)):
        if np.isnan(F[i]).any():
            raise InsufficientData(f"no full feature vector for {series.dates[i]}")
        window = (None, series.dates[i] - ONE_DAY)
        for col, name in enumerate(models):
            kwargs = {"lam": lam} if name in ("RR", "LASSO") else {}
            out[row, col] = predict(FITTERS[name](series, window, **kwargs), F[i])
    panel = ForecastPanel(series.dates[i0:i1 + 1], list(models), out,
                          series.rv_d[i0:i1 + 1], series.scale)
    return ensemble_forecasts(panel) if ensembles else panel


# ----------------------------------------------------------------- I/O


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_panel(panel: ForecastPanel, path) -> None:
    """Write ``# scale: ...`` then ``date,actual,<models>`` with 17-digit floats."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# scale: {panel.scale}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "actual", *panel.models])
        for i in range(len(panel)):
            w.writerow([str(panel.dates[i]), _fmt(panel.actuals[i]),
                        *(_fmt(v) for v in panel.forecasts[i])])


def ingest_panel(path) -> ForecastPanel:
    """Read and validate a panel CSV written by :func:`write_panel` or any
    external producer following the same schema."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#") or "scale:" not in first:
            raise MissingData(f"{path}: first line must be '# scale: raw|log'")
        scale = first.split("scale:", 1)[1].strip()
        if scale not in ("raw", "log"):
            raise MissingData(f"{path}: unknown scale {scale!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["date", "actual"] or len(header) < 3:
            raise MissingData(f"{path}: header must be 'date,actual,<model1>,...'")
        dates, actuals, rows = [], [], []
        seen = set()
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(header) or any(c.strip() == "" for c in row):
                raise MissingData(f"{path}:{lineno}: missing cell")
            if row[0] in seen:
                raise DuplicateDate(f"{path}:{lineno}: duplicate date {row[0]}")
            seen.add(row[0])
            dates.append(np.datetime64(row[0], "D"))
            vals = [float(c) for c in row[1:]]
            if not np.all(np.isfinite(vals)):
                raise MissingData(f"{path}:{lineno}: non-finite value")
            actuals.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise MissingData(f"{path}: no data rows")
    dates = np.array(dates, dtype="datetime64[D]")
    if np.any(np.diff(dates) != ONE_DAY):
        raise MissingData(f"{path}: panel dates are not consecutive days")
    return ForecastPanel(dates, header[2:], np.array(rows), np.array(actuals), scale)
