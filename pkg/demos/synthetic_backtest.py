"""Compare the three quantile methods on a synthetic realized-variance panel.

The log-RV follows an AR(1) process, so the "Oracle" column knows the
conditional median exactly and "Noisy" is a perturbed copy. We run QRS,
QLR and QRF on the log scale over the last 200 days, score all curves on
the raw scale and test whether the score differences are significant.

Run with ``python demos/synthetic_backtest.py``.
"""

import numpy as np

from rvquant.backtest import BacktestConfig, archive_losses, common_day_losses, run_backtest
from rvquant.evaluation import dm_matrix
from rvquant.synthetic import ar1_oracle_panel


def main():
    panel = ar1_oracle_panel(600, phi=0.9, sigma=0.5, seed=42, noise=0.2)
    print(f"panel: {len(panel)} days, models {panel.models}")

    results = {}
    for method in ("qrs", "qlr", "qrf"):
        cfg = BacktestConfig(method=method, log=True, test_days=200, seed=1, n_trees=100)
        results[method] = run_backtest(cfg, panel)
        if method == "qrf":
            print(f"QRF min_leaf chosen by out-of-bag error: {results[method].min_leaf}")

    print(f"\n{'model':<14}{'CRPS':>12}{'MARFE':>8}{'PI90 %':>8}{'MWS':>12}")
    for res in results.values():
        for name, m in res.report.models.items():
            print(f"{name:<14}{m.crps_mean:>12.3e}{m.marfe:>8.3f}{m.pi_within:>8.1f}{m.mws:>12.3e}")

    # pool per-day CRPS across runs and test every ordered pair
    losses = {}
    for res in results.values():
        losses.update(archive_losses(res.archive, res.dates, res.actuals))
    names, grid, _ = dm_matrix(common_day_losses(losses))
    print("\nrow significantly better than column (DM, 5%):")
    width = max(map(len, names))
    print(" " * width + " " + " ".join(n[:6].rjust(6) for n in names))
    for name, row in zip(names, grid):
        print(name.ljust(width) + " " + " ".join(("x" if v else ".").rjust(6) for v in row))

    wins = grid.sum(axis=1)
    print(f"\nmost pairwise wins: {names[int(np.argmax(wins))]}")


if __name__ == "__main__":
    main()
