"""Linear quantile regression as a stacking meta-model.

Each level ``q`` gets its own coefficient vector minimizing the summed
pinball loss. The fit is the bounded-variable dual LP

    max  y'd   s.t.  X'd = (1 - q) X'1,   0 <= d <= 1

solved with a primal-dual (Frisch-Newton) interior-point method with
Mehrotra predictor-corrector steps. The regression coefficients are
recovered as the negated equality multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .density import LEVELS
from .errors import DimError, InvalidLevel, NonConvergent, RankDeficient, SolverError

GAP_TOL = 1e-8
MAX_ITER = 100
STEP_FRACTION = 0.99995


def pinball(y, yq, q):
    """Pinball loss ``(y - yq) q`` above the quantile, ``(y - yq)(q - 1)`` below.

    Broadcasts over array inputs.
    """
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr <= 0) | (q_arr >= 1)):
        raise InvalidLevel("quantile level must lie in (0, 1)")
    diff = np.asarray(y, dtype=float) - np.asarray(yq, dtype=float)
    out = np.where(diff >= 0, diff * q_arr, diff * (q_arr - 1))
    return float(out) if np.ndim(out) == 0 else out


def pinball_objective(X, y, beta, q) -> float:
    return float(np.sum(pinball(y, X @ beta, q)))


@dataclass
class LevelFit:
    coef: np.ndarray
    objective: float
    iterations: int
    gap: float


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def independent_columns(X, rtol: float | None = None) -> np.ndarray:
    """Indices of a maximal linearly independent column subset (pivoted QR)."""
    R, piv = qr(X, mode="r", pivoting=True)
    d = np.abs(np.diag(R))
    if rtol is None:
        rtol = max(X.shape) * np.finfo(float).eps
    rank = int(np.sum(d > rtol * d[0])) if d.size and d[0] > 0 else 0
    return np.sort(piv[:rank])


def fit_qlr_level(X, y, q: float, tol: float = GAP_TOL, max_iter: int = MAX_ITER) -> LevelFit:
    """Minimize ``sum_t pinball(y_t, x_t'beta, q)``.

    ``X`` must already contain the intercept column. Convergence is declared
    when the duality gap is below ``tol * max(1, |objective|)``.
    """
    if not 0 < q < 1:
        raise InvalidLevel("quantile level must lie in (0, 1)")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise DimError("X must be (T, m) and aligned with y")
    T, m = X.shape
    if T <= m:
        raise DimError(f"need more rows than columns, got {T}x{m}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SolverError("non-finite data")
    keep = independent_columns(X)
    if len(keep) == 0:
        raise RankDeficient("design matrix is identically zero")
    if len(keep) < m:
        # collinear inputs: solve on a basis, dropped columns get weight 0
        sub = fit_qlr_level(X[:, keep], y, q, tol, max_iter)
        beta = np.zeros(m)
        beta[keep] = sub.coef
        return LevelFit(beta, sub.objective, sub.iterations, sub.gap)

    A = X.T                      # m x T
    c = -y
    b = (1.0 - q) * X.sum(axis=0)
    # primal start d = 1 - q is strictly interior and satisfies A d = b
    x = np.full(T, 1.0 - q)
    s = 1.0 - x
    # dual start: least-squares multipliers; split the reduced cost into z - w
    yd, *_ = np.linalg.lstsq(X, c, rcond=None)
    r = c - X @ yd
    pad = np.mean(np.abs(r))
    if pad == 0:
        pad = max(np.mean(np.abs(y)), 1.0) * 1e-3
    z = np.maximum(r, 0) + pad
    w = np.maximum(-r, 0) + pad

    it = 0
    gap = float(x @ z + s @ w)
    while it < max_iter:
        objective = float(b @ yd - w.sum())
        if gap <= tol * max(1.0, abs(objective)):
            break
        it += 1
        Qd = 1.0 / (z / x + w / s)
        AQ = A * Qd
        M = AQ @ A.T
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            # near-singular late in the path; a tiny diagonal shift restores definiteness
            try:
                L = np.linalg.cholesky(M + np.eye(m) * (1e-12 * np.trace(M) / m))
            except np.linalg.LinAlgError as exc:
                raise SolverError("normal matrix is not positive definite") from exc

        def direction(r_xz, r_sw):
            # A dx = 0, ds = -dx, A'dy + dz - dw = 0 with linearized complementarity
            rhs_x = r_xz / x - r_sw / s
            dy = np.linalg.solve(L.T, np.linalg.solve(L, -(AQ @ rhs_x)))
            dx = Qd * (A.T @ dy + rhs_x)
            ds = -dx
            dz = (r_xz - z * dx) / x
            dw = (r_sw - w * ds) / s
            return dx, ds, dy, dz, dw

        # predictor
        dx, ds, dy, dz, dw = direction(-x * z, -s * w)
        ap = min(_max_step(x, dx), _max_step(s, ds))
        ad = min(_max_step(z, dz), _max_step(w, dw))
        mu = gap / (2 * T)
        gap_aff = (x + ap * dx) @ (z + ad * dz) + (s + ap * ds) @ (w + ad * dw)
        sigma = (gap_aff / gap) ** 3
        # corrector with centering
        dx, ds, dy, dz, dw = direction(sigma * mu - x * z - dx * dz,
                                       sigma * mu - s * w - ds * dw)
        ap = min(1.0, STEP_FRACTION * min(_max_step(x, dx), _max_step(s, ds)))
        ad = min(1.0, STEP_FRACTION * min(_max_step(z, dz), _max_step(w, dw)))
        x = x + ap * dx
        s = s + ap * ds
        yd = yd + ad * dy
        z = z + ad * dz
        w = w + ad * dw
        gap = float(x @ z + s @ w)
        if not np.isfinite(gap):
            raise SolverError("interior-point iterate diverged")
    else:
        objective = float(b @ yd - w.sum())
        if gap > tol * max(1.0, abs(objective)):
            raise NonConvergent(f"duality gap {gap:.3g} after {max_iter} iterations")

    beta = -yd
    return LevelFit(beta, pinball_objective(X, y, beta, q), it, gap)


@dataclass
class QLRModel:
    """One coefficient vector per level; ``coefs`` has shape (levels, m)."""

    levels: np.ndarray
    coefs: np.ndarray
    objectives: np.ndarray
    extended: bool = False
    scale: str = "raw"

    def predict(self, inputs, sort: bool = False):
        return predict_qlr(self, inputs, sort=sort)


def design(forecasts, extra=None) -> np.ndarray:
    """Intercept column, base forecasts, then optional extended inputs."""
    F = np.atleast_2d(np.asarray(forecasts, dtype=float))
    parts = [np.ones((len(F), 1)), F]
    if extra is not None:
        parts.append(np.atleast_2d(np.asarray(extra, dtype=float)))
    return np.hstack(parts)


def fit_qlr(X, y, levels=LEVELS, extended: bool = False, scale: str = "raw") -> QLRModel:
    """Independent pinball-loss fits at every level on the same design.

    ``X`` is the full design including the intercept column (see :func:`design`).
    """
    levels = np.asarray(levels, dtype=float)
    coefs, objs = [], []
    for q in levels:
        try:
            fit = fit_qlr_level(X, y, float(q))
        except (SolverError, NonConvergent) as exc:
            raise type(exc)(f"level {q:.2f}: {exc}") from exc
        coefs.append(fit.coef)
        objs.append(fit.objective)
    return QLRModel(levels, np.array(coefs), np.array(objs), extended, scale)


def predict_qlr(model: QLRModel, inputs, sort: bool = False) -> np.ndarray:
    """Quantile values for one input vector (or a matrix of rows).

    ``inputs`` holds the base forecasts and any extended inputs, without
    the intercept. Crossing levels are left as they are unless ``sort`` is set.
    """
    x = np.asarray(inputs, dtype=float)
    m = model.coefs.shape[1] - 1
    if x.shape[-1] != m:
        raise DimError(f"expected {m} inputs, got {x.shape[-1]}")
    out = model.coefs[:, 0] + x @ model.coefs[:, 1:].T
    return np.sort(out, axis=-1) if sort else out
