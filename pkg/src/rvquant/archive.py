"""Flat-file interchange for quantile forecasts and their evaluation.

Archive CSV::

    # method: qrs
    # variant: log
    ...
    date,model,q001,...,q099
    2021-01-01,HAR-l,0.00012,...

Actuals CSV (raw scale, one row per test day)::

    date,actual
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .density import LEVELS
from .errors import AlignError, MissingData

REP_TAG = "@rep"


def level_columns(levels=LEVELS) -> list[str]:
    return [f"q{int(round(q * 100)):03d}" for q in levels]


def _fmt(x) -> str:
    return format(float(x), ".17g")


def format_record(day, model: str, values) -> str:
    return ",".join([str(np.datetime64(day, "D")), model, *(_fmt(v) for v in values)]) + "\n"


def base_label(model: str) -> str:
    """Model name with any repetition tag stripped."""
    return model.split(REP_TAG, 1)[0]


@dataclass
class ForecastArchive:
    """Quantile curves keyed by (date, model) plus run metadata."""

    dates: list = field(default_factory=list)
    models: list = field(default_factory=list)
    values: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, day, model, values):
        self.dates.append(np.datetime64(day, "D"))
        self.models.append(model)
        self.values.append(np.asarray(values, dtype=float))

    def __len__(self):
        return len(self.dates)

    def model_names(self) -> list:
        seen = []
        for m in self.models:
            if m not in seen:
                seen.append(m)
        return seen

    def curves(self, model: str):
        """Dates and the ``(N, 99)`` matrix for one model, in date order."""
        rows = [(d, v) for d, m, v in zip(self.dates, self.models, self.values) if m == model]
        rows.sort(key=lambda r: r[0])
        if not rows:
            raise KeyError(model)
        return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])

    def write(self, path):
        with open(path, "w", newline="") as fh:
            write_header(fh, self.meta)
            for d, m, v in zip(self.dates, self.models, self.values):
                fh.write(format_record(d, m, v))


def write_header(fh, meta: dict, levels=LEVELS):
    for k, v in meta.items():
        fh.write(f"# {k}: {v}\n")
    fh.write(",".join(["date", "model", *level_columns(levels)]) + "\n")


def read_archive(path) -> ForecastArchive:
    arch = ForecastArchive()
    with open(path, newline="") as fh:
        line = fh.readline()
        while line.startswith("#"):
            key, _, val = line[1:].partition(":")
            arch.meta[key.strip()] = val.strip()
            line = fh.readline()
        header = line.rstrip("\n").split(",")
        if header[:2] != ["date", "model"] or header[2:] != level_columns():
            raise MissingData(f"{path}: header must be 'date,model,q001,...,q099'")
        for lineno, row in enumerate(csv.reader(fh), start=2 + len(arch.meta)):
            if not row:
                continue
            if len(row) != len(header) or any(c == "" for c in row):
                raise MissingData(f"{path}:{lineno}: incomplete record")
            arch.add(row[0], row[1], [float(c) for c in row[2:]])
    return arch


def write_actuals(dates, actuals, path):
    with open(path, "w", newline="") as fh:
        fh.write("date,actual\n")
        for d, a in zip(dates, actuals):
            fh.write(f"{np.datetime64(d, 'D')},{_fmt(a)}\n")


def read_actuals(path):
    dates, vals = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["date", "actual"]:
            raise MissingData(f"{path}: header must be 'date,actual'")
        for row in reader:
            dates.append(np.datetime64(row["date"], "D"))
            vals.append(float(row["actual"]))
    return np.array(dates, dtype="datetime64[D]"), np.array(vals)


def default_actuals_path(archive_path) -> str:
    return os.path.join(os.path.dirname(os.path.abspath(archive_path)), "actuals.csv")


def align_actuals(dates, actual_dates, actual_values) -> np.ndarray:
    lookup = {d: v for d, v in zip(actual_dates.tolist(), actual_values)}
    try:
        return np.array([lookup[d] for d in np.asarray(dates).tolist()])
    except KeyError as exc:
        raise AlignError(f"no actual value for {exc.args[0]}") from None


# ---------------------------------------------------------- plot data


def write_calibration_csv(path, refr_by_model: dict, levels=LEVELS):
    names = list(refr_by_model)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["q", *(f"refr_{n}" for n in names)]) + "\n")
        for i, q in enumerate(levels):
            fh.write(",".join([f"{q:.2f}", *(_fmt(refr_by_model[n][i]) for n in names)]) + "\n")


def write_pi_csv(path, coverage_by_model: dict):
    with open(path, "w", newline="") as fh:
        fh.write("model,within,below,above\n")
        for name, (w, b, a) in coverage_by_model.items():
            fh.write(f"{name},{_fmt(w)},{_fmt(b)},{_fmt(a)}\n")


def write_fan_csv(path, dates, actuals, matrix, levels=LEVELS):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["date", "actual", *level_columns(levels)]) + "\n")
        for d, a, row in zip(dates, actuals, matrix):
            fh.write(",".join([str(np.datetime64(d, "D")), _fmt(a), *(_fmt(v) for v in row)]) + "\n")


def write_dm_csv(path, names, grid):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["model", *names]) + "\n")
        for n, row in zip(names, grid):
            fh.write(",".join([n, *("1" if v else "0" for v in row)]) + "\n")


def write_importance_csv(path, names, scores):
    with open(path, "w", newline="") as fh:
        fh.write("feature,importance\n")
        for n, s in zip(names, scores):
            fh.write(f"{n},{_fmt(s)}\n")
