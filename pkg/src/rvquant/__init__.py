"""Probabilistic forecasts of realized variance from point forecasts.

Three meta-methods turn base-model point forecasts into 99-level quantile
curves: residual simulation with a Gaussian KDE (:mod:`rvquant.qrs`),
quantile linear regression (:mod:`rvquant.qlr`) and quantile regression
forests (:mod:`rvquant.qrf`). :mod:`rvquant.evaluation` scores the curves
and :mod:`rvquant.backtest` runs the rolling retrain-per-day protocol.
"""

from .backtest import BacktestConfig, evaluate_archive, load_config, run_backtest
from .base_models import ForecastPanel, base_forecast_panel, ingest_panel, write_panel
from .density import LEVELS, KernelDensity, QuantileCurve, fit_kde, kde_cdf, kde_icdf
from .evaluation import crps, dm_matrix, dm_test, marfe, model_metrics, mws, winkler
from .qlr import fit_qlr, predict_qlr
from .qrf import ForestParams, fit_forest, qrf_quantiles, qrf_weights
from .qrs import qrs_quantiles
from .volatility import RVSeries, build_rv_series, compute_daily_rv, feature_vector, log_transform

__version__ = "0.1.0"
