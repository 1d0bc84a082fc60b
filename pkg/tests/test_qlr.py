import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from rvquant.density import LEVELS
from rvquant.errors import DimError, InvalidLevel
from rvquant.qlr import (
    design,
    fit_qlr,
    fit_qlr_level,
    independent_columns,
    pinball,
    pinball_objective,
    predict_qlr,
)


def _grid_objective(y, q, n=200_001):
    # brute force over a fine grid of intercepts, then the exact check of
    # every data point (the optimum of a piecewise-linear objective sits on one)
    grid = np.concatenate([np.linspace(y.min(), y.max(), n), y])
    d = y[None, :] - grid[:, None]
    obj = np.where(d >= 0, q * d, (q - 1) * d).sum(axis=1)
    return obj.min()


def _highs(X, y, q):
    T, m = X.shape
    c = np.concatenate([np.zeros(m), q * np.ones(T), (1 - q) * np.ones(T)])
    A = np.hstack([X, np.eye(T), -np.eye(T)])
    bounds = [(None, None)] * m + [(0, None)] * (2 * T)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    assert res.status == 0
    return res.fun


def test_pinball_values():
    assert pinball(1, 0, 0.5) == 0.5
    assert pinball(0, 1, 0.9) == pytest.approx(0.1)
    for q in (0.01, 0.5, 0.99):
        assert pinball(3.3, 3.3, q) == 0
    with pytest.raises(InvalidLevel):
        pinball(1, 0, 1.0)
    with pytest.raises(InvalidLevel):
        pinball(1, 0, 0.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0.001, 0.999))
def test_pinball_nonnegative(y, yq, q):
    assert pinball(y, yq, q) >= 0


def test_intercept_only_median():
    y = np.arange(1.0, 6.0)
    fit = fit_qlr_level(np.ones((5, 1)), y, 0.5)
    assert fit.coef[0] == pytest.approx(3.0, abs=1e-6)


def test_intercept_only_matches_grid_oracle():
    y = np.arange(1.0, 11.0)
    fit = fit_qlr_level(np.ones((10, 1)), y, 0.9)
    assert fit.objective == pytest.approx(_grid_objective(y, 0.9), abs=1e-6)


def test_intercept_only_discrete_optimality():
    rng = np.random.default_rng(0)
    for T in (7, 20, 49):
        y = rng.normal(size=T)
        for q in (0.1, 0.5, 0.9):
            b0 = fit_qlr_level(np.ones((T, 1)), y, q).coef[0]
            below = np.sum(y < b0 - 1e-9)
            assert q * T - 1 <= below <= q * T + 1


def test_perfect_linear_fit_all_levels():
    rng = np.random.default_rng(1)
    X = design(rng.normal(size=(60, 2)))
    y = X @ np.array([0.3, 1.5, -0.7])
    model = fit_qlr(X, y)
    assert np.max(np.abs(model.objectives)) <= 1e-8
    np.testing.assert_allclose(model.coefs, np.tile([0.3, 1.5, -0.7], (99, 1)), atol=1e-6)


def test_matches_highs_on_random_designs():
    rng = np.random.default_rng(2)
    for _ in range(5):
        T, m = rng.integers(30, 120), rng.integers(1, 6)
        X = design(rng.normal(size=(T, m)))
        y = X @ rng.normal(size=m + 1) + rng.standard_t(3, T)
        for q in (0.05, 0.5, 0.95):
            fit = fit_qlr_level(X, y, q)
            ref = _highs(X, y, q)
            assert fit.objective == pytest.approx(ref, abs=1e-6 * max(1, ref))


def test_beats_ols_point():
    rng = np.random.default_rng(3)
    X = design(rng.normal(size=(80, 3)))
    y = X @ [1, 2, 3, 4] + rng.exponential(size=80)
    ols, *_ = np.linalg.lstsq(X, y, rcond=None)
    for q in (0.1, 0.5, 0.9):
        assert fit_qlr_level(X, y, q).objective <= pinball_objective(X, y, ols, q) + 1e-12


def test_collinear_inputs_solved_on_basis():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50, 1))
    X = design(np.hstack([x, 2 * x, rng.normal(size=(50, 1))]))
    assert list(independent_columns(X)) in ([0, 1, 3], [0, 2, 3])
    y = X[:, 1] + rng.normal(size=50)
    fit = fit_qlr_level(X, y, 0.5)
    assert fit.objective == pytest.approx(_highs(X, y, 0.5), abs=1e-6)


def test_zero_target():
    rng = np.random.default_rng(5)
    model = fit_qlr(design(rng.normal(size=(40, 2))), np.zeros(40))
    np.testing.assert_allclose(model.coefs, 0, atol=1e-8)


def test_copy_predictor_slope_one():
    rng = np.random.default_rng(6)
    y = rng.normal(size=50)
    model = fit_qlr(design(y[:, None]), y)
    np.testing.assert_allclose(model.coefs[:, 1], 1.0, atol=1e-6)
    np.testing.assert_allclose(model.coefs[:, 0], 0.0, atol=1e-6)


def test_adding_predictor_never_hurts():
    rng = np.random.default_rng(7)
    F = rng.normal(size=(70, 3))
    y = F @ [1, 0.5, 0.1] + rng.normal(size=70)
    small = fit_qlr(design(F[:, :2]), y, levels=[0.2, 0.5, 0.8])
    big = fit_qlr(design(F), y, levels=[0.2, 0.5, 0.8])
    assert np.all(big.objectives <= small.objectives + 1e-7)


def test_predict_matches_per_level_fits():
    rng = np.random.default_rng(8)
    F = rng.normal(size=(60, 2))
    y = F[:, 0] + rng.normal(size=60)
    X = design(F)
    model = fit_qlr(X, y)
    x = np.array([0.3, -1.2])
    curve = predict_qlr(model, x)
    for i in (0, 49, 98):
        beta = fit_qlr_level(X, y, LEVELS[i]).coef
        assert curve[i] == pytest.approx(beta @ np.concatenate([[1.0], x]), abs=1e-6)


def test_predict_sort_and_flat():
    model = fit_qlr(design(np.random.default_rng(9).normal(size=(40, 1))), np.arange(40.0))
    model.coefs[:] = model.coefs[::-1]
    raw = predict_qlr(model, [1.0])
    assert np.any(np.diff(raw) < 0)
    assert np.all(np.diff(predict_qlr(model, [1.0], sort=True)) >= 0)
    model.coefs[:] = [2.0, 0.5]
    np.testing.assert_array_equal(predict_qlr(model, [2.0]), 3.0)
    with pytest.raises(DimError):
        predict_qlr(model, [1.0, 2.0])


def test_scale_equivariance():
    rng = np.random.default_rng(10)
    F = rng.normal(size=(50, 2))
    y = F @ [1, -1] + rng.normal(size=50)
    a = 3.7
    m1 = fit_qlr(design(F), y, levels=[0.1, 0.5, 0.9])
    m2 = fit_qlr(design(a * F), a * y, levels=[0.1, 0.5, 0.9])
    x = np.array([0.2, 0.4])
    np.testing.assert_allclose(predict_qlr(m2, a * x), a * predict_qlr(m1, x), atol=1e-5)


def test_dimension_errors():
    with pytest.raises(DimError):
        fit_qlr_level(np.ones((3, 3)), np.ones(3), 0.5)
    with pytest.raises(DimError):
        fit_qlr_level(np.ones((5, 1)), np.ones(4), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40), st.sampled_from([0.1, 0.5, 0.9]))
def test_intercept_only_property(y, q):
    y = np.asarray(y)
    fit = fit_qlr_level(np.ones((len(y), 1)), y, q)
    assert fit.objective == pytest.approx(_grid_objective(y, q, n=2001), abs=1e-6 * max(1, np.abs(y).sum()))
