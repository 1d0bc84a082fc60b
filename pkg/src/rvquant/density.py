"""Gaussian kernel density estimation and its numerical inverse CDF.

A fitted :class:`KernelDensity` is the average of Gaussian bumps of width
``h`` centred on each sample. Quantiles come from a safeguarded Newton
iteration on the mixture CDF, vectorized across levels. Levels that fail
to converge are reported as gaps and can be repaired with
:func:`pchip_fill`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import EmptyInput, InsufficientAnchors, NonConvergent

#: The 99 quantile levels 0.01, 0.02, ..., 0.99.
LEVELS = np.arange(1, 100) / 100.0

CDF_TOL = 1e-10
MAX_ITER = 200
BRACKET_WIDTHS = 8.0
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KernelDensity:
    samples: np.ndarray
    bandwidth: float

    @property
    def degenerate(self) -> bool:
        return self.bandwidth == 0.0

    def cdf(self, y):
        return kde_cdf(self, y)

    def icdf(self, q):
        return kde_icdf(self, q)


@dataclass
class QuantileCurve:
    """Quantile values at fixed levels; ``gaps`` marks interpolated levels."""

    levels: np.ndarray
    values: np.ndarray
    gaps: np.ndarray = None

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.gaps is None:
            self.gaps = np.zeros(self.levels.shape, dtype=bool)
        else:
            self.gaps = np.asarray(self.gaps, dtype=bool)
        if not (self.levels.shape == self.values.shape == self.gaps.shape):
            raise ValueError("levels, values and gaps must have equal shape")

    def at(self, q: float) -> float:
        i = int(np.argmin(np.abs(self.levels - q)))
        if abs(self.levels[i] - q) > 1e-9:
            raise KeyError(f"level {q} not on the curve")
        return float(self.values[i])


def normal_reference_sigma(samples: np.ndarray) -> float:
    """Robust spread ``min(std, IQR / 1.349)``, falling back to ``std``
    when the IQR collapses to zero on data that is not constant."""
    std = float(np.std(samples, ddof=1))
    q75, q25 = np.percentile(samples, [75, 25])
    iqr_sigma = float(q75 - q25) / 1.349
    sigma = min(std, iqr_sigma)
    return sigma if sigma > 0 else std


def fit_kde(samples) -> KernelDensity:
    """Fit a Gaussian KDE with the normal-reference bandwidth

    ``h = sigma * (4 / (3 n)) ** (1/5)``.

    A single distinct value gives a degenerate density (``h = 0``).
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise EmptyInput("cannot fit a density to no samples")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples must be finite")
    if s.size < 2 or np.all(s == s[0]):
        return KernelDensity(s, 0.0)
    sigma = normal_reference_sigma(s)
    h = sigma * (4.0 / (3.0 * s.size)) ** 0.2
    return KernelDensity(s, float(h))


def kde_cdf(kd: KernelDensity, y):
    """Mixture CDF ``mean_i Phi((y - s_i) / h)``; accepts scalar or array ``y``."""
    y_arr = np.asarray(y, dtype=float)
    flat = y_arr.reshape(-1, 1)
    if kd.degenerate:
        out = (kd.samples[None, :] <= flat).mean(axis=1)
    else:
        out = ndtr((flat - kd.samples[None, :]) / kd.bandwidth).mean(axis=1)
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)


def kde_pdf(kd: KernelDensity, y):
    y_arr = np.asarray(y, dtype=float)
    z = (y_arr.reshape(-1, 1) - kd.samples[None, :]) / kd.bandwidth
    out = np.exp(-0.5 * z * z).mean(axis=1) / (kd.bandwidth * _SQRT_2PI)
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)


def kde_icdf_levels(kd: KernelDensity, levels, tol: float = CDF_TOL, max_iter: int = MAX_ITER):
    """Invert the KDE CDF at many levels at once.

    Returns
    -------
    values : ndarray
        Quantile values; NaN where the iteration cap was hit.
    converged : ndarray of bool
    """
    q = np.asarray(levels, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("levels must lie strictly inside (0, 1)")
    if kd.degenerate:
        # all mass on the sample values; ties resolve to the empirical quantile
        return np.quantile(kd.samples, q, method="inverted_cdf"), np.ones(q.shape, bool)

    h = kd.bandwidth
    # the starting bracket is shared by all levels, so widen it with scalar
    # checks against the extreme levels (far tails only)
    lo = kd.samples.min() - BRACKET_WIDTHS * h
    hi = kd.samples.max() + BRACKET_WIDTHS * h
    q_min, q_max = q.min(), q.max()
    for _ in range(60):
        if kde_cdf(kd, lo) <= q_min:
            break
        lo -= hi - lo
    for _ in range(60):
        if kde_cdf(kd, hi) >= q_max:
            break
        hi += hi - lo
    lo = np.full(q.shape, lo)
    hi = np.full(q.shape, hi)

    # start from the empirical quantile, a good guess for Newton
    y = np.clip(np.quantile(kd.samples, q), lo, hi)
    active = np.ones(q.shape, dtype=bool)
    converged = np.zeros(q.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ya = y[idx]
        F, dens = _cdf_pdf(kd, ya)
        f = F - q[idx]
        ok = np.abs(f) <= tol
        below = f < 0
        lo_a = np.where(below, ya, lo[idx])
        hi_a = np.where(below, hi[idx], ya)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = ya - f / dens
        inside = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a)
        step = np.where(inside, newton, 0.5 * (lo_a + hi_a))
        # a bracket narrower than float spacing cannot be refined further
        stalled = (hi_a - lo_a) <= 4 * np.spacing(np.maximum(np.abs(lo_a), np.abs(hi_a)))
        lo[idx], hi[idx] = lo_a, hi_a
        y[idx] = np.where(ok, ya, step)
        converged[idx[ok]] = True
        active[idx[ok | stalled]] = False
    # stalled brackets end on an unevaluated midpoint; check it once
    rest = np.flatnonzero(~converged & ~active)
    if rest.size:
        converged[rest] = np.abs(kde_cdf(kd, y[rest]) - q[rest]) <= tol
    values = np.where(converged, y, np.nan)
    return values, converged


def _cdf_pdf(kd: KernelDensity, y: np.ndarray):
    # CDF and density from one shared matrix of standardized distances
    z = (y[:, None] - kd.samples[None, :]) / kd.bandwidth
    F = ndtr(z).mean(axis=1)
    z *= z
    z *= -0.5
    np.exp(z, out=z)
    return F, z.mean(axis=1) / (kd.bandwidth * _SQRT_2PI)


def kde_icdf(kd: KernelDensity, q: float) -> float:
    """Value ``y`` with ``|F(y) - q| <= 1e-10``.

    Raises
    ------
    NonConvergent
        If the iteration cap is hit before reaching the tolerance.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly inside (0, 1)")
    values, ok = kde_icdf_levels(kd, [q])
    if not ok[0]:
        raise NonConvergent(f"inverse CDF did not converge at q={q}")
    return float(values[0])


# ------------------------------------------------------------------ PCHIP


def _edge_slope(h0, h1, d0, d1):
    # three-point one-sided estimate, clipped to preserve shape
    s = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
    if np.sign(s) != np.sign(d0):
        return 0.0
    if np.sign(d0) != np.sign(d1) and abs(s) > abs(3 * d0):
        return 3 * d0
    return s


def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Fritsch-Carlson derivative estimates for monotone cubic interpolation."""
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d
    for k in range(1, n - 1):
        if delta[k - 1] * delta[k] > 0:
            w1 = 2 * h[k] + h[k - 1]
            w2 = h[k] + 2 * h[k - 1]
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k])
    d[0] = _edge_slope(h[0], h[1], delta[0], delta[1])
    d[-1] = _edge_slope(h[-1], h[-2], delta[-1], delta[-2])
    return d


def pchip_eval(x: np.ndarray, y: np.ndarray, xq) -> np.ndarray:
    """Evaluate the PCHIP through ``(x, y)`` at ``xq``; outside the anchors
    the boundary cubic is extended."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xq = np.asarray(xq, dtype=float)
    d = pchip_slopes(x, y)
    k = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, len(x) - 2)
    h = x[k + 1] - x[k]
    t = (xq - x[k]) / h
    h00 = (1 + 2 * t) * (1 - t) ** 2
    h10 = t * (1 - t) ** 2
    h01 = t * t * (3 - 2 * t)
    h11 = t * t * (t - 1)
    return h00 * y[k] + h10 * h * d[k] + h01 * y[k + 1] + h11 * h * d[k + 1]


def pchip_fill(curve: QuantileCurve) -> QuantileCurve:
    """Fill the curve's gap levels by shape-preserving cubic interpolation
    through the non-gap (level, value) pairs."""
    gaps = curve.gaps | ~np.isfinite(curve.values)
    if not gaps.any():
        return QuantileCurve(curve.levels.copy(), curve.values.copy(), curve.gaps.copy())
    anchors = ~gaps
    if anchors.sum() < 2:
        raise InsufficientAnchors("need at least two known levels to interpolate")
    values = curve.values.copy()
    values[gaps] = pchip_eval(curve.levels[anchors], curve.values[anchors], curve.levels[gaps])
    return QuantileCurve(curve.levels.copy(), values, gaps)
