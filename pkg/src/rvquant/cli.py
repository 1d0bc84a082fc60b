"""Command-line entry point: ``rvquant <subcommand> ...``.

Exit codes
----------
0  success
1  unexpected internal error
2  usage or configuration error
3  data error (malformed, missing or misaligned input)
4  numerical failure (solver did not converge, rank deficiency)
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import archive as io
from .backtest import (
    BacktestConfig,
    archive_losses,
    common_day_losses,
    evaluate_archive,
    forest_importance,
    load_config,
    run_backtest,
    write_plot_data,
)
from .base_models import BASE_MODELS, base_forecast_panel, write_panel
from .errors import ConfigError, DataError, NumericalError
from .evaluation import ALPHA, dm_matrix
from .volatility import build_rv_series, log_transform, read_intraday_csv, read_rv_csv, write_rv_csv

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4

log = logging.getLogger("rvquant")


def _cmd_compute_rv(args):
    days = read_intraday_csv(args.input, args.expected_bars)
    series = build_rv_series(days)
    write_rv_csv(series, args.output)
    log.info("wrote %d days to %s", len(series), args.output)


def _cmd_fit_base(args):
    series = read_rv_csv(args.input)
    if args.log:
        series = log_transform(series)
    lam = args.lam if args.lam == "auto" else float(args.lam)
    panel = base_forecast_panel(series, args.start, args.end, tuple(args.models), lam,
                                ensembles=not args.no_ensembles)
    write_panel(panel, args.output)
    log.info("wrote %d rows x %d models to %s", len(panel), len(panel.models), args.output)


_FORECAST_FLAGS = {
    "panel": "panel_path", "method": "method", "log": "log", "extended": "extended",
    "test_start": "test_start", "test_end": "test_end", "test_days": "test_days",
    "seed": "seed", "repetitions": "repetitions", "output": "output_dir",
    "workers": "workers", "min_leaf": "min_leaf", "n_trees": "n_trees",
    "rv": "rv_path", "resume": "resume", "average_forecasts": "average_forecasts",
}


def _cmd_forecast(args):
    overrides = {key: getattr(args, flag) for flag, key in _FORECAST_FLAGS.items()}
    cfg = load_config(args.config, overrides)
    if not cfg.output_dir:
        raise ConfigError("an output directory is required (-o or output_dir in the config)")
    result = run_backtest(cfg)
    for name, m in result.report.models.items():
        print(f"{name}\tCRPS={m.crps_mean:.6g}\tMARFE={m.marfe:.4f}\tPI90={m.pi_within:.1f}%")
    log.info("archive written to %s", result.paths["archive"])


def _load_with_actuals(path, actuals=None):
    arch = io.read_archive(path)
    dates, values = io.read_actuals(actuals or io.default_actuals_path(path))
    return arch, dates, values


def _cmd_evaluate(args):
    arch, dates, values = _load_with_actuals(args.archive, args.actuals)
    report = evaluate_archive(arch, dates, values, args.winkler_convention)
    os.makedirs(args.output, exist_ok=True)
    with open(os.path.join(args.output, "metrics.json"), "w") as fh:
        fh.write(report.to_json())
    write_plot_data(arch, dates, values, args.output)
    for name, m in report.models.items():
        print(f"{name}\tCRPS={m.crps_mean:.6g}\tMARFE={m.marfe:.4f}\tMWS={m.mws:.6g}")


def _cmd_dm_test(args):
    losses = {}
    for path in args.archives:
        arch, dates, values = _load_with_actuals(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        for name, pair in archive_losses(arch, dates, values).items():
            key = name if name not in losses else f"{stem}:{name}"
            losses[key] = pair
    if len(losses) < 2:
        raise ConfigError("need at least two models across the given archives")
    names, grid, _ = dm_matrix(common_day_losses(losses), alpha=args.alpha)
    io.write_dm_csv(args.output, names, grid)


def _meta_config(meta: dict, panel=None) -> BacktestConfig:
    if meta.get("method") != "qrf":
        raise ConfigError("importance needs an archive produced by the qrf method")

    def opt_int(key):
        v = meta.get(key)
        return None if v in (None, "None", "") else int(v)

    return BacktestConfig(
        panel_path=panel or meta.get("panel_path"),
        method="qrf",
        log=meta.get("variant") == "log",
        extended=meta.get("extended") == "True",
        seed=int(meta.get("seed", 0)),
        repetitions=int(meta.get("repetitions", 1)),
        n_trees=opt_int("n_trees") or 100,
        mtry=opt_int("mtry"),
        min_leaf=opt_int("min_leaf"),
        multiplicity=meta.get("multiplicity", "True") == "True",
        rv_path=meta.get("rv_path") or None,
    ).validate()


def _cmd_importance(args):
    arch = io.read_archive(args.archive)
    cfg = _meta_config(arch.meta, args.panel)
    if not cfg.panel_path:
        raise ConfigError("archive does not record its panel; pass --panel")
    cfg.test_start = str(min(arch.dates))
    names, perm, split = forest_importance(cfg, min_leaf=cfg.min_leaf)
    os.makedirs(args.output, exist_ok=True)
    io.write_importance_csv(os.path.join(args.output, "importance_permutation.csv"), names, perm)
    io.write_importance_csv(os.path.join(args.output, "importance_split.csv"), names, split)
    for n, p, s in zip(names, perm, split):
        print(f"{n}\tpermutation={p:.6g}\tsplit={s:.6g}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rvquant", description="Quantile forecasts of realized variance.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("compute-rv", help="intraday prices -> daily RV CSV")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--expected-bars", type=int, default=None,
                   help="prices per complete day; shorter days are reported")
    s.set_defaults(func=_cmd_compute_rv)

    s = sub.add_parser("fit-base", help="RV CSV -> base-model forecast panel")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--start", required=True, help="first forecast date")
    s.add_argument("--end", default=None)
    s.add_argument("--log", action="store_true", help="fit on ln RV")
    s.add_argument("--lam", default="auto", help="'auto' or a fixed penalty for RR/LASSO")
    s.add_argument("--models", nargs="+", default=list(BASE_MODELS), choices=BASE_MODELS)
    s.add_argument("--no-ensembles", action="store_true")
    s.set_defaults(func=_cmd_fit_base)

    s = sub.add_parser("forecast", help="panel + config -> quantile archive")
    s.add_argument("--config", default=None, help="INI file with a [backtest] section")
    s.add_argument("--panel", default=None)
    s.add_argument("--method", choices=("qrs", "qlr", "qrf"), default=None)
    s.add_argument("--log", action="store_const", const=True, default=None)
    s.add_argument("--extended", action="store_const", const=True, default=None)
    s.add_argument("--test-start", default=None)
    s.add_argument("--test-end", default=None)
    s.add_argument("--test-days", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--repetitions", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--min-leaf", type=int, default=None)
    s.add_argument("--n-trees", type=int, default=None)
    s.add_argument("--rv", default=None, help="RV CSV for extended inputs")
    s.add_argument("--average-forecasts", action="store_const", const=True, default=None)
    s.add_argument("--resume", action="store_const", const=True, default=None)
    s.add_argument("-o", "--output", default=None)
    s.set_defaults(func=_cmd_forecast)

    s = sub.add_parser("evaluate", help="archive -> metrics JSON and plot-data CSVs")
    s.add_argument("archive")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--actuals", default=None, help="defaults to actuals.csv beside the archive")
    s.add_argument("--winkler-convention", choices=("miscoverage", "coverage"), default="miscoverage")
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("dm-test", help="archives -> Diebold-Mariano 0/1 matrix CSV")
    s.add_argument("archives", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--alpha", type=float, default=ALPHA)
    s.set_defaults(func=_cmd_dm_test)

    s = sub.add_parser("importance", help="qrf archive -> permutation and split importance CSVs")
    s.add_argument("archive")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--panel", default=None, help="override the panel path recorded in the archive")
    s.set_defaults(func=_cmd_importance)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
