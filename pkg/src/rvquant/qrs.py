"""Quantiles by residual simulation.

The point forecast for the target day is shifted by every past forecast
error of the same model, a Gaussian KDE is fitted to the resulting cloud,
and the 99 quantiles are read off its inverse CDF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base_models import ForecastPanel
from .density import LEVELS, QuantileCurve, fit_kde, kde_icdf_levels, pchip_fill
from .errors import EmptyResiduals, InsufficientHistory


@dataclass(frozen=True)
class ResidualSet:
    """Errors ``y_t - yhat_t`` for days strictly before the forecast day."""

    residuals: np.ndarray
    scale: str = "raw"

    @classmethod
    def from_history(cls, actuals, forecasts, scale: str = "raw") -> "ResidualSet":
        e = np.asarray(actuals, dtype=float) - np.asarray(forecasts, dtype=float)
        if not np.all(np.isfinite(e)):
            raise ValueError("residuals must be finite")
        return cls(e, scale)

    def __len__(self):
        return len(self.residuals)


def qrs_quantiles(point_forecast: float, residuals, levels=LEVELS,
                  clamp_at_zero: bool = False) -> QuantileCurve:
    """Quantile curve of the KDE fitted to ``point_forecast + residuals``.

    Levels where the inverse CDF does not converge are filled by PCHIP
    and flagged in ``curve.gaps``. With a single residual the curve is
    flat at ``point_forecast``. Negative values are kept unless
    ``clamp_at_zero`` is set.
    """
    e = residuals.residuals if isinstance(residuals, ResidualSet) else np.asarray(residuals, float)
    if e.size == 0:
        raise EmptyResiduals("no residual history")
    levels = np.asarray(levels, dtype=float)
    if e.size < 2:
        # one residual carries no spread information
        return QuantileCurve(levels, np.full(len(levels), float(point_forecast)))
    kd = fit_kde(point_forecast + e)
    values, ok = kde_icdf_levels(kd, levels)
    curve = QuantileCurve(levels, values, ~ok)
    if not ok.all():
        curve = pchip_fill(curve)
        # interpolation may not respect order between anchors and fills
        curve.values = np.maximum.accumulate(curve.values)
    if clamp_at_zero:
        curve.values = np.maximum(curve.values, 0.0)
    return curve


def qrs_run(panel: ForecastPanel, model: str, test_positions, levels=LEVELS,
            clamp_at_zero: bool = False) -> list[QuantileCurve]:
    """Curves for each test row, using every earlier row's residual."""
    yhat = panel.column(model)
    e_all = panel.actuals - yhat
    out = []
    for tau in test_positions:
        if tau < 1:
            raise InsufficientHistory(f"row {tau} has no earlier residuals")
        out.append(qrs_quantiles(yhat[tau], e_all[:tau], levels, clamp_at_zero))
    return out
