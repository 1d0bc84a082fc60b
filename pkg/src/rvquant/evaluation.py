"""Scores for quantile forecasts and pairwise significance tests.

Curves are passed as ``(N, 99)`` arrays of quantile values (one row per
day) or as sequences of :class:`~rvquant.density.QuantileCurve`. Levels
default to 0.01..0.99.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .density import LEVELS
from .errors import AlignError, DegenerateSeries, IncompleteCurve, InvalidInterval

SCHEMA_VERSION = 1
ALPHA = 0.05
PI_LOWER, PI_UPPER = 0.05, 0.95


def as_matrix(curves, n_levels: int = len(LEVELS)) -> np.ndarray:
    """Stack curves into an ``(N, n_levels)`` array."""
    if isinstance(curves, np.ndarray):
        M = curves
    else:
        curves = list(curves)
        M = np.array([getattr(c, "values", c) for c in curves], dtype=float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[-1] != n_levels:
        raise IncompleteCurve(f"expected {n_levels} levels per curve, got {M.shape[-1]}")
    return M


def _aligned(curves, ys, levels=LEVELS):
    M = as_matrix(curves, len(levels))
    y = np.atleast_1d(np.asarray(ys, dtype=float))
    if len(M) != len(y):
        raise AlignError(f"{len(M)} curves vs {len(y)} observations")
    if len(y) == 0:
        raise AlignError("no observations")
    return M, y


def _level_index(levels, q):
    i = int(np.argmin(np.abs(np.asarray(levels) - q)))
    if abs(levels[i] - q) > 1e-9:
        raise IncompleteCurve(f"level {q} not present")
    return i


def crps(curves, ys, levels=LEVELS, normalize: bool = False):
    """Sum of pinball losses over the level grid, per observation.

    With ``normalize`` the sum is divided by the number of levels. A single
    curve and scalar observation give a float; otherwise an array.
    """
    single = np.ndim(ys) == 0
    M, y = _aligned(curves, ys, levels)
    q = np.asarray(levels, dtype=float)
    diff = y[:, None] - M
    loss = np.where(diff >= 0, diff * q, diff * (q - 1)).sum(axis=1)
    if normalize:
        loss = loss / len(q)
    return float(loss[0]) if single else loss


def refr(curves, ys, q: float, levels=LEVELS) -> float:
    """Share of observations at or below the predicted ``q``-quantile."""
    M, y = _aligned(curves, ys, levels)
    return float(np.mean(y <= M[:, _level_index(levels, q)]))


def refr_all(curves, ys, levels=LEVELS) -> np.ndarray:
    M, y = _aligned(curves, ys, levels)
    return np.mean(y[:, None] <= M, axis=0)


def marfe(curves, ys, levels=LEVELS) -> float:
    """Mean absolute gap between empirical and nominal coverage across levels."""
    return float(np.mean(np.abs(refr_all(curves, ys, levels) - np.asarray(levels))))


def winkler(y, lower, upper, alpha: float = 0.1):
    """Interval width plus ``2/alpha`` times the distance by which ``y``
    falls outside ``[lower, upper]``. Broadcasts."""
    y, lower, upper = (np.asarray(a, dtype=float) for a in (y, lower, upper))
    if np.any(lower > upper):
        raise InvalidInterval("lower bound above upper bound")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    width = upper - lower
    pen = (2.0 / alpha) * (np.maximum(lower - y, 0) + np.maximum(y - upper, 0))
    out = width + pen
    return float(out) if out.ndim == 0 else out


def interval_penalty_alpha(q_l: float, q_u: float, convention: str = "miscoverage") -> float:
    """Divisor used in the out-of-interval penalty.

    ``"miscoverage"``: ``1 - (q_u - q_l)`` (0.1 for a 90% interval).
    ``"coverage"``: ``q_u - q_l`` (0.9 for a 90% interval).
    """
    if convention == "miscoverage":
        return 1.0 - (q_u - q_l)
    if convention == "coverage":
        return q_u - q_l
    raise ValueError(f"unknown convention {convention!r}")


def mws(curves, ys, q_l: float = PI_LOWER, q_u: float = PI_UPPER, levels=LEVELS,
        convention: str = "miscoverage") -> float:
    M, y = _aligned(curves, ys, levels)
    lo = M[:, _level_index(levels, q_l)]
    hi = M[:, _level_index(levels, q_u)]
    # crossing curves can put the "lower" quantile above the upper one
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    return float(np.mean(winkler(y, lo, hi, interval_penalty_alpha(q_l, q_u, convention))))


def pi_coverage(curves, ys, q_l: float = PI_LOWER, q_u: float = PI_UPPER, levels=LEVELS):
    """Percentages of observations within, below and above the interval
    (boundaries count as within)."""
    M, y = _aligned(curves, ys, levels)
    lo = M[:, _level_index(levels, q_l)]
    hi = M[:, _level_index(levels, q_u)]
    below = y < lo
    above = (y > hi) & ~below
    n = len(y)
    b = 100.0 * below.sum() / n
    a = 100.0 * above.sum() / n
    return 100.0 - b - a, b, a


def point_errors(curves, ys, levels=LEVELS):
    """MAE and MSE of the median quantile as a point forecast."""
    M, y = _aligned(curves, ys, levels)
    e = y - M[:, _level_index(levels, 0.5)]
    return float(np.mean(np.abs(e))), float(np.mean(e * e))


def crossing_rate(curves):
    """Share of days with any adjacent-level inversion, and share of
    inverted adjacent pairs overall."""
    if isinstance(curves, np.ndarray):
        M = np.atleast_2d(curves.astype(float))
    else:
        M = np.atleast_2d(np.array([getattr(c, "values", c) for c in curves], dtype=float))
    viol = M[:, :-1] > M[:, 1:]
    n, k = viol.shape
    return float(viol.any(axis=1).mean()), float(viol.sum() / (k * n))


def crps_summary(values):
    """Mean, median and interquartile range (linear interpolation)."""
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(v.mean()), float(med), float(q3 - q1)


@dataclass
class DMResult:
    statistic: float
    p_value: float
    mean_diff: float


def dm_test(loss_a, loss_b, harvey: bool = True, horizon: int = 1) -> DMResult:
    """Diebold-Mariano test of equal expected loss.

    The long-run variance of ``d = loss_a - loss_b`` uses Newey-West
    autocovariances up to lag ``horizon - 1`` (plain variance for one-step
    forecasts). With ``harvey`` the small-sample factor
    ``sqrt((N + 1 - 2h + h(h-1)/N) / N)`` is applied. The p-value is
    two-sided under the standard normal. A negative statistic means
    ``loss_a`` is smaller.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape:
        raise AlignError("loss series must have equal length")
    n = len(a)
    if n < 10:
        raise AlignError("need at least 10 paired losses")
    d = a - b
    dbar = d.mean()
    dc = d - dbar
    gamma0 = dc @ dc / n
    lrv = gamma0
    for k in range(1, horizon):
        lrv += 2 * (1 - k / horizon) * (dc[k:] @ dc[:-k]) / n
    if not lrv > 0 or gamma0 <= 1e-300:
        raise DegenerateSeries("loss differential has zero variance")
    stat = dbar / np.sqrt(lrv / n)
    if harvey:
        h = horizon
        stat *= np.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
    p = 2 * norm.sf(abs(stat))
    return DMResult(float(stat), float(p), float(dbar))


def dm_matrix(losses: dict, alpha: float = ALPHA, harvey: bool = True):
    """``grid[i, j]`` is True when model ``i`` has significantly lower loss
    than model ``j``.

    Returns
    -------
    names : list of str
    grid : (n, n) bool ndarray
    results : dict mapping (i_name, j_name) to DMResult or None
    """
    names = list(losses)
    n = len(names)
    grid = np.zeros((n, n), dtype=bool)
    results = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            try:
                r = dm_test(losses[names[i]], losses[names[j]], harvey=harvey)
            except DegenerateSeries:
                results[(names[i], names[j])] = None
                continue
            results[(names[i], names[j])] = r
            grid[i, j] = r.p_value < alpha and r.statistic < 0
    return names, grid, results


# ------------------------------------------------------------ reporting


@dataclass
class ModelMetrics:
    n: int
    crps_mean: float
    crps_median: float
    crps_iqr: float
    marfe: float
    mws: float
    pi_within: float
    pi_below: float
    pi_above: float
    mae_q: float
    mse_q: float
    crossing_day_rate: float
    crossing_pair_rate: float
    negative_share: float


def model_metrics(curves, ys, levels=LEVELS, convention: str = "miscoverage") -> ModelMetrics:
    M, y = _aligned(curves, ys, levels)
    c = crps(M, y, levels)
    mean, med, iqr = crps_summary(c)
    within, below, above = pi_coverage(M, y, levels=levels)
    mae, mse = point_errors(M, y, levels)
    day, pair = crossing_rate(M)
    return ModelMetrics(
        n=len(y), crps_mean=mean, crps_median=med, crps_iqr=iqr,
        marfe=marfe(M, y, levels), mws=mws(M, y, levels=levels, convention=convention),
        pi_within=within, pi_below=below, pi_above=above, mae_q=mae, mse_q=mse,
        crossing_day_rate=day, crossing_pair_rate=pair,
        negative_share=float(np.mean(M < 0)),
    )


def average_metrics(items) -> ModelMetrics:
    """Field-wise mean of several metric records (e.g. forest repetitions)."""
    items = list(items)
    keys = asdict(items[0])
    out = {k: float(np.mean([getattr(m, k) for m in items])) for k in keys}
    out["n"] = items[0].n
    return ModelMetrics(**out)


@dataclass
class MetricsReport:
    models: dict
    dm: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "meta": self.meta,
            "models": {k: asdict(v) for k, v in self.models.items()},
            "dm": self.dm,
        }
        return json.dumps(payload, indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        raw = json.loads(text)
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {raw.get('schema_version')!r}")
        models = {k: ModelMetrics(**v) for k, v in raw["models"].items()}
        return cls(models, raw.get("dm", {}), raw.get("meta", {}))


def build_report(curves_by_model: dict, ys, levels=LEVELS, convention: str = "miscoverage",
                 meta: dict | None = None) -> MetricsReport:
    models = {k: model_metrics(v, ys, levels, convention) for k, v in curves_by_model.items()}
    losses = {k: crps(v, ys, levels) for k, v in curves_by_model.items()}
    dm = {}
    if len(losses) > 1 and len(np.atleast_1d(ys)) >= 10:
        _, _, results = dm_matrix(losses)
        for (a, b), r in results.items():
            dm[f"{a}|{b}"] = None if r is None else {"statistic": r.statistic, "p_value": r.p_value}
    return MetricsReport(models, dm, meta or {})
