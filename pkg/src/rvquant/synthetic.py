"""Synthetic panels with a known data-generating process.

Used by the test-suite and the demos where real exchange data is absent.
"""

from __future__ import annotations

import numpy as np

from .base_models import ForecastPanel
from .volatility import RVSeries, rv_series_from_daily

START = np.datetime64("2019-01-01", "D")


def _dates(n: int, start=START) -> np.ndarray:
    return np.datetime64(start, "D") + np.arange(n)


def gaussian_error_panel(n_days: int, sigma: float = 1.0, n_models: int = 1,
                         seed: int = 0, level: float = 0.0) -> ForecastPanel:
    """Actuals equal to the forecast plus iid ``N(0, sigma^2)`` noise.

    Forecasts follow a slow random walk around ``level``; each model gets
    its own independent error draw so columns differ.
    """
    rng = np.random.default_rng(seed)
    signal = level + np.cumsum(rng.normal(0.0, 0.1, n_days))
    y = signal + rng.normal(0.0, sigma, n_days)
    F = np.column_stack([y - rng.normal(0.0, sigma, n_days) if j else signal
                         for j in range(n_models)])
    names = [f"M{j}" for j in range(n_models)]
    return ForecastPanel(_dates(n_days), names, F, y, "raw")


def ar1_log_rv(n_days: int, phi: float = 0.9, mu: float = -8.0, sigma: float = 0.5,
               seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Log-RV path ``z_t = mu + phi (z_{t-1} - mu) + sigma eps_t``.

    Returns the raw RV path ``exp(z)`` and the conditional mean of ``z``.
    """
    rng = np.random.default_rng(seed)
    z = np.empty(n_days)
    cond = np.empty(n_days)
    prev = mu
    for t in range(n_days):
        cond[t] = mu + phi * (prev - mu)
        z[t] = cond[t] + sigma * rng.normal()
        prev = z[t]
    return np.exp(z), cond


def ar1_oracle_panel(n_days: int, phi: float = 0.9, mu: float = -8.0, sigma: float = 0.5,
                     seed: int = 0, noise: float = 0.05) -> ForecastPanel:
    """Raw-scale panel for an AR(1)-in-log RV process.

    ``Oracle`` forecasts the conditional median ``exp(E[z_t | z_{t-1}])``;
    ``Noisy`` adds a small multiplicative perturbation to it.
    """
    rv, cond = ar1_log_rv(n_days, phi, mu, sigma, seed)
    rng = np.random.default_rng([seed, 1])
    oracle = np.exp(cond)
    noisy = np.exp(cond + noise * rng.normal(size=n_days))
    return ForecastPanel(_dates(n_days), ["Oracle", "Noisy"], np.column_stack([oracle, noisy]), rv, "raw")


def ar1_rv_series(n_days: int, seed: int = 0, **kw) -> RVSeries:
    rv, _ = ar1_log_rv(n_days, seed=seed, **kw)
    return rv_series_from_daily(_dates(n_days), rv)


def gbm_prices(n_steps: int = 288, sigma: float = 0.002, p0: float = 30000.0, seed: int = 0) -> np.ndarray:
    """Geometric Brownian motion price path with ``n_steps`` returns."""
    rng = np.random.default_rng(seed)
    return p0 * np.exp(np.concatenate([[0.0], np.cumsum(sigma * rng.normal(size=n_steps))]))
