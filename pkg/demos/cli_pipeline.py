"""The full command-line pipeline on simulated intraday prices.

Steps: write 5-minute prices with a slowly varying volatility, turn them
into daily RV, fit the base HAR-type models, forecast quantiles with QRS
and QLR, then evaluate and compare the archives. Every step goes through
``rvquant.cli.main`` exactly as the ``rvquant`` command would.

Run with ``python demos/cli_pipeline.py [workdir]``.
"""

import os
import sys
import tempfile

import numpy as np

from rvquant.cli import main as rvquant

BARS = 288


def write_prices(path, n_days=260, seed=0):
    rng = np.random.default_rng(seed)
    log_vol = np.empty(n_days)
    log_vol[0] = np.log(0.002)
    for d in range(1, n_days):
        log_vol[d] = np.log(0.002) + 0.95 * (log_vol[d - 1] - np.log(0.002)) + 0.15 * rng.normal()
    price = 30000.0
    day0 = np.datetime64("2020-01-01T00:00")
    with open(path, "w") as fh:
        fh.write("timestamp,price\n")
        for d in range(n_days):
            steps = np.exp(log_vol[d]) * rng.normal(size=BARS)
            for k in range(BARS):
                stamp = day0 + np.timedelta64(d * 1440 + 5 * k, "m")
                fh.write(f"{stamp}:00Z,{price!r}\n")
                price = float(price * np.exp(steps[k]))


def run(*args):
    print("$ rvquant " + " ".join(args))
    code = rvquant(list(args))
    if code:
        sys.exit(code)


def main(work):
    os.makedirs(work, exist_ok=True)
    prices = os.path.join(work, "prices.csv")
    write_prices(prices)
    rv = os.path.join(work, "rv.csv")
    panel = os.path.join(work, "panel.csv")
    run("compute-rv", prices, "-o", rv, "--expected-bars", str(BARS))
    run("fit-base", rv, "-o", panel, "--start", "2020-04-01", "--log")

    ini = os.path.join(work, "qrs.ini")
    with open(ini, "w") as fh:
        fh.write("[backtest]\nversion = 1\npanel_path = panel.csv\nmethod = qrs\nlog = true\n"
                 "test_days = 120\noutput_dir = qrs\n")
    run("forecast", "--config", ini)
    run("forecast", "--panel", panel, "--method", "qlr", "--log", "--test-days", "120",
        "-o", os.path.join(work, "qlr"))
    run("evaluate", os.path.join(work, "qlr", "archive.csv"), "-o", os.path.join(work, "qlr_eval"))
    run("dm-test", os.path.join(work, "qrs", "archive.csv"), os.path.join(work, "qlr", "archive.csv"),
        "-o", os.path.join(work, "dm.csv"))
    print("\nDM matrix (1 = row beats column):")
    print(open(os.path.join(work, "dm.csv")).read())
    print(f"outputs are in {work}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="rvquant_"))
