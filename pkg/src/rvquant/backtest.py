"""Rolling retrain-per-day backtest of the three quantile meta-methods.

For every test day ``tau`` the meta-model sees only panel rows strictly
before ``tau``: QRS pools the residuals of each base model, QLR and QRF
are refitted on the base forecasts (optionally plus lagged RV features).
Log-variant quantiles are exponentiated before scoring so that all
variants are evaluated on the raw RV scale.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import archive as io
from .base_models import ForecastPanel, ensemble_forecasts, ingest_panel
from .density import LEVELS
from .errors import ConfigError, InsufficientHistory, NonPositiveValue, RVQuantError
from .evaluation import (
    MetricsReport,
    average_metrics,
    crps,
    dm_matrix,
    model_metrics,
    pi_coverage,
    refr_all,
)
from .qlr import design, fit_qlr, predict_qlr
from .qrf import (
    MIN_LEAF_GRID,
    ForestParams,
    fit_forest,
    importance_permutation,
    importance_split,
    qrf_quantiles,
    tune_min_leaf,
)
from .qrs import qrs_quantiles
from .volatility import read_rv_csv, rv_series_from_daily

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
METHODS = ("qrs", "qlr", "qrf")
MIN_TRAIN_DAYS = 30
ENSEMBLE_COLUMNS = ("Ens-Mean", "Ens-Med")
FEATURE_NAMES = ("RV_d", "RV_w", "RV_m")


@dataclass
class BacktestConfig:
    panel_path: str | None = None
    method: str = "qrs"
    log: bool = False
    extended: bool = False
    test_start: str | None = None
    test_end: str | None = None
    test_days: int = 365
    seed: int = 0
    repetitions: int = 1
    output_dir: str | None = None
    workers: int = 1
    models: tuple | None = None
    ensembles: bool = True
    clamp_at_zero: bool = False
    sort_quantiles: bool = False
    n_trees: int = 100
    mtry: int | None = None
    min_leaf: int | None = None
    min_leaf_grid: tuple = MIN_LEAF_GRID
    retune_daily: bool = False
    multiplicity: bool = True
    average_forecasts: bool = False
    rv_path: str | None = None
    resume: bool = False
    winkler_convention: str = "miscoverage"

    @property
    def variant(self) -> str:
        return "log" if self.log else "raw"

    @property
    def suffix(self) -> str:
        tag = ("l" if self.log else "") + ("e" if self.extended else "")
        return f"-{tag}" if tag else ""

    def validate(self):
        problems = []
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}, got {self.method!r}")
        if self.repetitions < 1:
            problems.append("repetitions must be >= 1")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if self.test_days < 1:
            problems.append("test_days must be >= 1")
        if self.extended and self.method == "qrs":
            problems.append("extended inputs apply to qlr/qrf only")
        if self.winkler_convention not in ("miscoverage", "coverage"):
            problems.append("winkler_convention must be 'miscoverage' or 'coverage'")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def forest_params(self, min_leaf: int) -> ForestParams:
        return ForestParams(self.n_trees, self.mtry, min_leaf, True, self.multiplicity)


def _convert(name: str, text: str):
    f = {fl.name: fl for fl in dataclasses.fields(BacktestConfig)}[name]
    kind = str(f.type)
    text = text.strip()
    if text.lower() in ("", "none") and "None" in kind:
        return None
    if kind.startswith("bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if kind.startswith("int"):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {text!r}") from None
    if kind.startswith("tuple"):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(int(t) for t in items) if name == "min_leaf_grid" else tuple(items)
    return text


def load_config(path=None, overrides: dict | None = None) -> BacktestConfig:
    """Read an INI-style ``[backtest]`` file, then apply ``overrides``.

    The file must carry ``version = 1``. Unknown keys are rejected.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            if not parser.read(path):
                raise ConfigError(f"cannot read config file {path}")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if "backtest" not in parser:
            raise ConfigError(f"{path}: missing [backtest] section")
        sec = dict(parser["backtest"])
        version = sec.pop("version", None)
        if version is None or version.strip() != str(CONFIG_VERSION):
            raise ConfigError(f"{path}: expected 'version = {CONFIG_VERSION}', got {version!r}")
        known = {f.name for f in dataclasses.fields(BacktestConfig)}
        unknown = sorted(set(sec) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}; allowed: {sorted(known)}")
        values = {k: _convert(k, v) for k, v in sec.items()}
        base = os.path.dirname(os.path.abspath(path))
        for key in ("panel_path", "rv_path", "output_dir"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = os.path.join(base, values[key])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return BacktestConfig(**values).validate()


def config_meta(cfg: BacktestConfig, min_leaf=None) -> dict:
    meta = {
        "method": cfg.method,
        "variant": cfg.variant,
        "extended": cfg.extended,
        "seed": cfg.seed,
        "repetitions": cfg.repetitions,
        "panel_path": cfg.panel_path,
    }
    if cfg.method == "qrf":
        meta.update(n_trees=cfg.n_trees, mtry=cfg.mtry, min_leaf=min_leaf,
                    multiplicity=cfg.multiplicity, average_forecasts=cfg.average_forecasts)
    if cfg.rv_path:
        meta["rv_path"] = cfg.rv_path
    return meta


# ------------------------------------------------------------ data prep


@dataclass
class PreparedData:
    dates: np.ndarray
    base_names: list
    base: np.ndarray        # (T, n) base forecasts, working scale
    qrs_names: list
    qrs_cols: np.ndarray    # base plus ensembles, working scale
    y: np.ndarray           # target, working scale
    y_raw: np.ndarray
    extra: np.ndarray | None
    log: bool

    def to_raw(self, values):
        return np.exp(values) if self.log else values


def _to_scale(panel: ForecastPanel, want_log: bool) -> ForecastPanel:
    if (panel.scale == "log") == want_log:
        return panel
    if want_log:
        if np.any(panel.forecasts <= 0) or np.any(panel.actuals <= 0):
            raise NonPositiveValue("raw panel has non-positive values; cannot take logs")
        return ForecastPanel(panel.dates, panel.models, np.log(panel.forecasts),
                             np.log(panel.actuals), "log")
    return ForecastPanel(panel.dates, panel.models, np.exp(panel.forecasts),
                         np.exp(panel.actuals), "raw")


def prepare(panel: ForecastPanel, cfg: BacktestConfig) -> PreparedData:
    work = _to_scale(panel, cfg.log)
    base_names = [m for m in work.models if m not in ENSEMBLE_COLUMNS]
    base_idx = [work.models.index(m) for m in base_names]
    base = work.forecasts[:, base_idx]
    if cfg.ensembles and not all(c in work.models for c in ENSEMBLE_COLUMNS):
        # ensembles are formed on the working scale from the base columns
        with_ens = ensemble_forecasts(ForecastPanel(work.dates, base_names, base, work.actuals, work.scale))
    else:
        with_ens = work
    qrs_names = list(cfg.models) if cfg.models else list(with_ens.models)
    missing = [m for m in qrs_names if m not in with_ens.models]
    if missing:
        raise ConfigError(f"models not in panel: {missing}")
    qrs_cols = np.column_stack([with_ens.column(m) for m in qrs_names])
    y_raw = np.exp(work.actuals) if cfg.log else work.actuals

    extra = None
    if cfg.extended:
        if cfg.rv_path:
            series = read_rv_csv(cfg.rv_path)
            feats = series.features()
            pos = ((work.dates - series.dates[0]) / np.timedelta64(1, "D")).astype(int)
            if pos.min() < 0 or pos.max() >= len(series):
                raise InsufficientHistory("RV file does not cover the panel dates")
            extra = feats[pos]
        else:
            extra = rv_series_from_daily(work.dates, y_raw).features()
        if cfg.log:
            with np.errstate(invalid="ignore", divide="ignore"):
                extra = np.log(extra)
    return PreparedData(work.dates, base_names, base, qrs_names, qrs_cols,
                        work.actuals, y_raw, extra, cfg.log)


def test_positions(data: PreparedData, cfg: BacktestConfig) -> np.ndarray:
    T = len(data.dates)

    def pos(day):
        i = int(np.searchsorted(data.dates, np.datetime64(day, "D")))
        if i >= T or data.dates[i] != np.datetime64(day, "D"):
            raise ConfigError(f"date {day} not in panel")
        return i

    start = pos(cfg.test_start) if cfg.test_start else T - cfg.test_days
    end = pos(cfg.test_end) if cfg.test_end else T - 1
    if start < MIN_TRAIN_DAYS:
        raise ConfigError(f"test range needs at least {MIN_TRAIN_DAYS} prior training days")
    if end < start:
        raise ConfigError("test_end precedes test_start")
    return np.arange(start, end + 1)


def _training_rows(data: PreparedData, tau: int) -> np.ndarray:
    rows = np.arange(tau)
    if data.extra is not None:
        rows = rows[np.all(np.isfinite(data.extra[:tau]), axis=1)]
    return rows


def _meta_design(data: PreparedData, rows) -> np.ndarray:
    extra = None if data.extra is None else data.extra[rows]
    return design(data.base[rows], extra)


def _day_seed(seed: int, rep: int, day) -> int:
    ordinal = int(np.datetime64(day, "D").astype(np.int64))
    return int(np.random.SeedSequence([seed, rep, ordinal]).generate_state(1)[0])


# ------------------------------------------------------------ labels


def qrs_labels(data: PreparedData) -> list:
    sfx = "-l" if data.log else ""
    return [f"{m}{sfx}" for m in data.qrs_names]


def meta_label(cfg: BacktestConfig) -> str:
    return cfg.method.upper() + cfg.suffix


def expected_labels(data: PreparedData, cfg: BacktestConfig) -> list:
    if cfg.method == "qrs":
        return qrs_labels(data)
    label = meta_label(cfg)
    if cfg.method == "qrf" and cfg.repetitions > 1 and not cfg.average_forecasts:
        return [f"{label}{io.REP_TAG}{r:02d}" for r in range(cfg.repetitions)]
    return [label]


# ------------------------------------------------------------ per day


def _qrs_day(data, tau, cfg):
    out = []
    for label, col in zip(qrs_labels(data), data.qrs_cols.T):
        e = data.y[:tau] - col[:tau]
        curve = qrs_quantiles(col[tau], e, LEVELS, clamp_at_zero=cfg.clamp_at_zero and not data.log)
        out.append((label, data.to_raw(curve.values)))
    return out


def _qlr_day(data, tau, cfg):
    rows = _training_rows(data, tau)
    if len(rows) < MIN_TRAIN_DAYS:
        raise InsufficientHistory(f"only {len(rows)} usable training rows")
    model = fit_qlr(_meta_design(data, rows), data.y[rows], LEVELS, cfg.extended,
                     "log" if data.log else "raw")
    x = _meta_design(data, np.array([tau]))[0, 1:]
    if not np.all(np.isfinite(x)):
        raise InsufficientHistory("extended inputs undefined on the test day")
    return [(meta_label(cfg), data.to_raw(predict_qlr(model, x, sort=cfg.sort_quantiles)))]


def _resolve_min_leaf(data, rows, cfg):
    if cfg.min_leaf is not None:
        return cfg.min_leaf
    head = rows[: max(2, (2 * len(rows)) // 3)]
    X = _meta_design(data, head)[:, 1:]
    return tune_min_leaf(X, data.y[head], cfg.min_leaf_grid, cfg.forest_params(1), cfg.seed)


def _qrf_day(data, tau, cfg, min_leaf):
    rows = _training_rows(data, tau)
    if len(rows) < MIN_TRAIN_DAYS:
        raise InsufficientHistory(f"only {len(rows)} usable training rows")
    if cfg.retune_daily:
        min_leaf = _resolve_min_leaf(data, rows, dataclasses.replace(cfg, min_leaf=None))
    X = _meta_design(data, rows)[:, 1:]
    x = _meta_design(data, np.array([tau]))[0, 1:]
    if not np.all(np.isfinite(x)):
        raise InsufficientHistory("extended inputs undefined on the test day")
    label = meta_label(cfg)
    curves = []
    for rep in range(cfg.repetitions):
        forest = fit_forest(X, data.y[rows], cfg.forest_params(min_leaf),
                            _day_seed(cfg.seed, rep, data.dates[tau]))
        curves.append(qrf_quantiles(forest, x, LEVELS).values)
    if cfg.repetitions == 1:
        return [(label, data.to_raw(curves[0]))]
    if cfg.average_forecasts:
        return [(label, data.to_raw(np.mean(curves, axis=0)))]
    return [(f"{label}{io.REP_TAG}{r:02d}", data.to_raw(c)) for r, c in enumerate(curves)]


# ------------------------------------------------------------ the loop


@dataclass
class BacktestResult:
    archive: io.ForecastArchive
    report: MetricsReport
    dates: np.ndarray
    actuals: np.ndarray
    min_leaf: int | None = None
    paths: dict = field(default_factory=dict)


def _completed_days(path, labels, meta) -> io.ForecastArchive | None:
    if not os.path.exists(path):
        return None
    old = io.read_archive(path)
    for k, v in meta.items():
        if old.meta.get(k) != str(v):
            raise ConfigError(f"cannot resume: archive has {k}={old.meta.get(k)!r}, config has {v!r}")
    by_day = {}
    for d, m, v in zip(old.dates, old.models, old.values):
        by_day.setdefault(d, {})[m] = v
    kept = io.ForecastArchive(meta=old.meta)
    for d in sorted(by_day):
        if set(by_day[d]) != set(labels):
            break
        for m in labels:
            kept.add(d, m, by_day[d][m])
    return kept


def run_backtest(cfg: BacktestConfig, panel: ForecastPanel | None = None) -> BacktestResult:
    """Forecast every test day and score the result on the raw scale.

    When ``cfg.output_dir`` is set the archive is written day by day to
    ``archive.csv`` (so an interrupted run can resume), next to
    ``actuals.csv`` and ``metrics.json``.
    """
    cfg.validate()
    if panel is None:
        if not cfg.panel_path:
            raise ConfigError("no panel given")
        panel = ingest_panel(cfg.panel_path)
    data = prepare(panel, cfg)
    positions = test_positions(data, cfg)
    labels = expected_labels(data, cfg)

    min_leaf = None
    if cfg.method == "qrf":
        min_leaf = _resolve_min_leaf(data, _training_rows(data, int(positions[0])), cfg)
        log.info("QRF min_leaf = %d", min_leaf)
    meta = config_meta(cfg, min_leaf)

    archive = io.ForecastArchive(meta=dict(meta))
    sink = None
    paths = {}
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        paths = {
            "archive": os.path.join(cfg.output_dir, "archive.csv"),
            "actuals": os.path.join(cfg.output_dir, "actuals.csv"),
            "metrics": os.path.join(cfg.output_dir, "metrics.json"),
        }
        io.write_actuals(data.dates[positions], data.y_raw[positions], paths["actuals"])
        done = _completed_days(paths["archive"], labels, meta) if cfg.resume else None
        if done is not None:
            archive = done
            finished = set(done.dates)
            positions_todo = np.array([p for p in positions if data.dates[p] not in finished], dtype=int)
        else:
            positions_todo = positions
        sink = open(paths["archive"], "w", newline="")
        io.write_header(sink, meta)
        for d, m, v in zip(archive.dates, archive.models, archive.values):
            sink.write(io.format_record(d, m, v))
        sink.flush()
    else:
        positions_todo = positions

    def task(tau):
        day = data.dates[tau]
        try:
            if cfg.method == "qrs":
                return tau, _qrs_day(data, tau, cfg)
            if cfg.method == "qlr":
                return tau, _qlr_day(data, tau, cfg)
            return tau, _qrf_day(data, tau, cfg, min_leaf)
        except RVQuantError as exc:
            raise type(exc)(f"{day}: {exc}") from exc

    try:
        if cfg.workers == 1:
            results = map(task, positions_todo)
            pool = None
        else:
            pool = ThreadPoolExecutor(max_workers=cfg.workers)
            results = pool.map(task, positions_todo)
        try:
            for tau, records in results:
                for label, values in records:
                    archive.add(data.dates[tau], label, values)
                    if sink:
                        sink.write(io.format_record(data.dates[tau], label, values))
                if sink:
                    sink.flush()
        finally:
            if pool is not None:
                pool.shutdown(cancel_futures=True)
    finally:
        if sink:
            sink.close()

    report = evaluate_archive(archive, data.dates[positions], data.y_raw[positions],
                              cfg.winkler_convention)
    if paths:
        with open(paths["metrics"], "w") as fh:
            fh.write(report.to_json())
    return BacktestResult(archive, report, data.dates[positions], data.y_raw[positions], min_leaf, paths)


# ------------------------------------------------------------ evaluation


def _groups(archive: io.ForecastArchive) -> dict:
    groups = {}
    for m in archive.model_names():
        groups.setdefault(io.base_label(m), []).append(m)
    return groups


def archive_losses(archive: io.ForecastArchive, actual_dates, actual_values) -> dict:
    """Per-day CRPS for each model, averaged over repetition tags.

    Returns a dict mapping model name to ``(dates, losses)``.
    """
    out = {}
    for name, members in _groups(archive).items():
        reps = []
        for m in members:
            dates, M = archive.curves(m)
            reps.append(crps(M, io.align_actuals(dates, actual_dates, actual_values), LEVELS))
        out[name] = (dates, np.mean(reps, axis=0))
    return out


def common_day_losses(losses: dict) -> dict:
    """Restrict ``(dates, losses)`` pairs to the days every model covers."""
    common = sorted(set.intersection(*(set(d.tolist()) for d, _ in losses.values())))
    aligned = {}
    for name, (dates, loss) in losses.items():
        lookup = dict(zip(dates.tolist(), loss))
        aligned[name] = np.array([lookup[d] for d in common])
    return aligned


def evaluate_archive(archive: io.ForecastArchive, actual_dates, actual_values,
                     convention: str = "miscoverage") -> MetricsReport:
    """Metrics per model; repetition-tagged models are averaged metric-wise."""
    models = {}
    for name, members in _groups(archive).items():
        per_rep = []
        for m in members:
            dates, M = archive.curves(m)
            y = io.align_actuals(dates, actual_dates, actual_values)
            per_rep.append(model_metrics(M, y, LEVELS, convention))
        models[name] = per_rep[0] if len(per_rep) == 1 else average_metrics(per_rep)
    report = MetricsReport(models, {}, dict(archive.meta))
    if len(models) > 1:
        aligned = common_day_losses(archive_losses(archive, actual_dates, actual_values))
        if len(next(iter(aligned.values()))) >= 10:
            _, _, results = dm_matrix(aligned)
            report.dm = {f"{a}|{b}": None if r is None else {"statistic": r.statistic, "p_value": r.p_value}
                         for (a, b), r in results.items()}
    return report


def write_plot_data(archive: io.ForecastArchive, actual_dates, actual_values, out_dir) -> dict:
    """Calibration, PI-coverage and per-model fan-chart CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    refr, cover, written = {}, {}, {}
    for name, members in _groups(archive).items():
        rs, cs = [], []
        for m in members:
            dates, M = archive.curves(m)
            y = io.align_actuals(dates, actual_dates, actual_values)
            rs.append(refr_all(M, y))
            cs.append(pi_coverage(M, y))
        refr[name] = np.mean(rs, axis=0)
        cover[name] = tuple(np.mean(cs, axis=0))
        dates, M = archive.curves(members[0])
        safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
        path = os.path.join(out_dir, f"fan_{safe}.csv")
        io.write_fan_csv(path, dates, io.align_actuals(dates, actual_dates, actual_values), M)
        written[f"fan:{name}"] = path
    written["calibration"] = os.path.join(out_dir, "calibration.csv")
    written["pi"] = os.path.join(out_dir, "pi.csv")
    io.write_calibration_csv(written["calibration"], refr)
    io.write_pi_csv(written["pi"], cover)
    return written


def forest_importance(cfg: BacktestConfig, panel: ForecastPanel | None = None, min_leaf: int | None = None):
    """Both importance measures for a forest trained on all rows before
    the first test day, averaged over ``cfg.repetitions`` seeds.

    Returns
    -------
    names : list of str
    permutation : ndarray
    split : ndarray
    """
    if panel is None:
        panel = ingest_panel(cfg.panel_path)
    data = prepare(panel, cfg)
    tau = int(test_positions(data, cfg)[0])
    rows = _training_rows(data, tau)
    if min_leaf is None:
        min_leaf = _resolve_min_leaf(data, rows, cfg)
    X = _meta_design(data, rows)[:, 1:]
    names = list(data.base_names)
    if data.extra is not None:
        names += [("ln " if cfg.log else "") + f for f in FEATURE_NAMES]
    perm, split = [], []
    for rep in range(cfg.repetitions):
        seed = _day_seed(cfg.seed, rep, data.dates[tau])
        forest = fit_forest(X, data.y[rows], cfg.forest_params(min_leaf), seed)
        perm.append(importance_permutation(forest, seed))
        split.append(importance_split(forest))
    return names, np.mean(perm, axis=0), np.mean(split, axis=0)
