"""Quantile regression forests.

Trees are plain CART regression trees grown on bootstrap samples with a
random subset of ``mtry`` features tried at each node. Unlike a regular
random forest the leaves keep the indices of the training samples that
fell into them, so a query point can be turned into a weight vector over
the training targets and from there into a weighted empirical CDF.

All randomness of tree ``j`` comes from ``SeedSequence([seed, j])``; the
forest is therefore identical whatever the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numba
import numpy as np

from .density import LEVELS, QuantileCurve
from .errors import ConfigError, NoOOBData

N_TREES = 100
MIN_LEAF_GRID = (1,) + tuple(range(5, 71, 5))


# ------------------------------------------------------------ tree kernels


@numba.njit(cache=True, nogil=True)
def _grow(X, y, min_leaf, mtry, keys):
    n, m = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    gain_out = np.zeros(cap)
    leaf_of = np.empty(n, np.int64)
    idx = np.arange(n)
    tmp = np.empty(n, np.int64)

    stack = np.empty((cap, 3), np.int64)
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, 0, n
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node, start, end = stack[top, 0], stack[top, 1], stack[top, 2]
        count = end - start
        ymin = np.inf
        ymax = -np.inf
        total = 0.0
        for k in range(start, end):
            v = y[idx[k]]
            total += v
            ymin = min(ymin, v)
            ymax = max(ymax, v)
        mean = total / count
        value[node] = mean

        best_f = -1
        best_gain = 0.0
        best_thr = 0.0
        if count >= 2 * min_leaf and ymin < ymax:
            parent = 0.0
            yc = np.empty(count)
            for k in range(count):
                yc[k] = y[idx[start + k]] - mean
                parent += yc[k] * yc[k]
            order = np.argsort(keys[node])
            vals = np.empty(count)
            for c in range(mtry):
                f = order[c]
                for k in range(count):
                    vals[k] = X[idx[start + k], f]
                o = np.argsort(vals, kind="mergesort")
                s_tot = 0.0
                q_tot = 0.0
                for k in range(count):
                    s_tot += yc[o[k]]
                    q_tot += yc[o[k]] * yc[o[k]]
                s_l = 0.0
                q_l = 0.0
                for k in range(1, count - min_leaf + 1):
                    yk = yc[o[k - 1]]
                    s_l += yk
                    q_l += yk * yk
                    if k < min_leaf:
                        continue
                    a = vals[o[k - 1]]
                    b = vals[o[k]]
                    if a == b:
                        continue
                    n_r = count - k
                    s_r = s_tot - s_l
                    sse = (q_l - s_l * s_l / k) + ((q_tot - q_l) - s_r * s_r / n_r)
                    g = parent - sse
                    if g > best_gain or (g == best_gain and best_f >= 0 and f < best_f):
                        best_gain = g
                        best_f = f
                        mid = 0.5 * (a + b)
                        best_thr = mid if mid < b else a
            if best_gain <= 1e-12 * parent:
                best_f = -1

        if best_f < 0:
            for k in range(start, end):
                leaf_of[idx[k]] = node
            continue

        # stable partition: x <= threshold goes left
        nl = 0
        for k in range(start, end):
            if X[idx[k], best_f] <= best_thr:
                tmp[nl] = idx[k]
                nl += 1
        nr = nl
        for k in range(start, end):
            if X[idx[k], best_f] > best_thr:
                tmp[nr] = idx[k]
                nr += 1
        for k in range(count):
            idx[start + k] = tmp[k]

        feature[node] = best_f
        threshold[node] = best_thr
        gain_out[node] = best_gain
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack[top, 0], stack[top, 1], stack[top, 2] = rc, start + nl, end
        top += 1
        stack[top, 0], stack[top, 1], stack[top, 2] = lc, start, start + nl
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], gain_out[:n_nodes], leaf_of)


@numba.njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


# ----------------------------------------------------------- data types


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = N_TREES
    mtry: int | None = None
    min_leaf: int = 5
    bootstrap: bool = True
    #: count bootstrap duplicates in leaf occupancy
    multiplicity: bool = True

    def resolved_mtry(self, m: int) -> int:
        return self.mtry if self.mtry is not None else max(1, int(round(m / 3)))

    def validate(self, m: int):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be >= 1")
        if not 1 <= self.resolved_mtry(m) <= m:
            raise ConfigError(f"mtry must be in [1, {m}]")


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    #: training indices drawn for this tree (with repeats)
    sample: np.ndarray
    #: training indices grouped by leaf: members[ptr[node]:ptr[node + 1]]
    members: np.ndarray
    ptr: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def leaf_members(self, node: int) -> np.ndarray:
        return self.members[self.ptr[node]:self.ptr[node + 1]]

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature >= 0])


@dataclass(frozen=True)
class Forest:
    trees: tuple
    X: np.ndarray
    y: np.ndarray
    params: ForestParams
    seed: int
    oob: np.ndarray  # (n_trees, T) bool

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def with_targets(self, y_new) -> "Forest":
        """Same tree structure, different training targets (leaf membership is kept)."""
        y_new = np.asarray(y_new, dtype=float)
        if y_new.shape != self.y.shape:
            raise ValueError("replacement targets must match the training length")
        return replace(self, y=y_new)

    def weights(self, x) -> np.ndarray:
        return qrf_weights(self, x)

    def quantiles(self, x, levels=LEVELS) -> QuantileCurve:
        return qrf_quantiles(self, x, levels)


def _tree_rng(seed: int, j: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, j]))


def _build_tree(X, y, params: ForestParams, seed: int, j: int):
    T, m = X.shape
    rng = _tree_rng(seed, j)
    if params.bootstrap:
        sample = rng.integers(0, T, size=T)
    else:
        sample = np.arange(T)
    keys = rng.random((2 * T + 1, m))
    feature, threshold, left, right, value, gain, leaf_of = _grow(
        np.ascontiguousarray(X[sample]), np.ascontiguousarray(y[sample]),
        params.min_leaf, params.resolved_mtry(m), keys)
    order = np.argsort(leaf_of, kind="stable")
    ptr = np.searchsorted(leaf_of[order], np.arange(len(feature) + 1))
    members = sample[order]
    tree = RegressionTree(feature, threshold, left, right, value, gain, sample, members, ptr)
    oob = np.ones(T, dtype=bool)
    oob[sample] = False
    if not params.bootstrap:
        oob[:] = False
    return tree, oob


def fit_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0, n_jobs: int = 1) -> Forest:
    """Grow ``params.n_trees`` trees on bootstrap samples of ``(X, y)``."""
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise ConfigError("X and y must have the same number of rows")
    if len(y) < 2:
        raise ConfigError("need at least two training samples")
    params.validate(X.shape[1])
    work = lambda j: _build_tree(X, y, params, seed, j)  # noqa: E731
    if n_jobs == 1:
        built = [work(j) for j in range(params.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            built = list(pool.map(work, range(params.n_trees)))
    trees = tuple(t for t, _ in built)
    oob = np.array([o for _, o in built])
    return Forest(trees, X, y, params, seed, oob)


# --------------------------------------------------------- QRF weights


def qrf_weights(forest: Forest, x) -> np.ndarray:
    """Training-sample weights for one query point.

    Within each tree every sample in the query's leaf gets
    ``1 / occupancy``; the per-tree vectors are averaged over trees.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(1, -1))
    T = len(forest.y)
    w = np.zeros(T)
    for tree in forest.trees:
        node = tree.apply(x)[0]
        members = tree.leaf_members(node)
        if not forest.params.multiplicity:
            members = np.unique(members)
        w += np.bincount(members, minlength=T) / len(members)
    return w / forest.n_trees


def weighted_quantiles(values, weights, levels) -> np.ndarray:
    """Smallest value whose cumulative weight reaches each level."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values)[order]
    cw = np.cumsum(np.asarray(weights)[order])
    cw /= cw[-1]
    # guard against the running sum landing a hair below an exact level
    pos = np.searchsorted(cw, np.asarray(levels) - 1e-12, side="left")
    return v[np.minimum(pos, len(v) - 1)]


def qrf_quantiles(forest: Forest, x, levels=LEVELS) -> QuantileCurve:
    w = qrf_weights(forest, x)
    return QuantileCurve(np.asarray(levels, float), weighted_quantiles(forest.y, w, levels))


def qrf_cdf(forest: Forest, x, y) -> float:
    w = qrf_weights(forest, x)
    return float(np.sum(w[forest.y <= y]))


# ------------------------------------------------------------- OOB error


def _oob_predictions(forest: Forest):
    T = len(forest.y)
    total = np.zeros(T)
    count = np.zeros(T, dtype=int)
    for tree, mask in zip(forest.trees, forest.oob):
        if mask.any():
            total[mask] += tree.predict(forest.X[mask])
            count[mask] += 1
    return total, count


def oob_error(forest: Forest) -> float:
    """Mean squared error of out-of-bag predictions.

    Samples that are in-bag for every tree are left out; their number is
    available from :func:`oob_coverage`.
    """
    total, count = _oob_predictions(forest)
    seen = count > 0
    if not seen.any():
        raise NoOOBData("no sample is out-of-bag for any tree")
    err = forest.y[seen] - total[seen] / count[seen]
    return float(np.mean(err * err))


def oob_coverage(forest: Forest) -> int:
    """Number of samples excluded from the OOB average."""
    return int(np.sum(~forest.oob.any(axis=0)))


def tune_min_leaf(X, y, grid=MIN_LEAF_GRID, params: ForestParams = ForestParams(),
                  seed: int = 0, n_jobs: int = 1) -> int:
    """Leaf size with the lowest OOB error; ties go to the larger leaf."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty min_leaf grid")
    best, best_err = None, np.inf
    for leaf in grid:
        err = oob_error(fit_forest(X, y, replace(params, min_leaf=int(leaf)), seed, n_jobs))
        if err < best_err or (err == best_err and leaf > best):
            best, best_err = int(leaf), err
    return best


# ---------------------------------------------------------- importance


def importance_permutation(forest: Forest, seed: int = 0) -> np.ndarray:
    """OOB permutation importance per feature.

    For each tree, the OOB MSE after shuffling one feature minus the OOB MSE
    as is. The per-tree increases are averaged and divided by their
    standard deviation across trees. A feature no tree splits on scores 0;
    if the increases have zero spread the raw mean is returned.
    """
    X, y = forest.X, forest.y
    m = X.shape[1]
    rows = []
    for j, (tree, mask) in enumerate(zip(forest.trees, forest.oob)):
        if not mask.any():
            continue
        rng = _tree_rng(seed, j)
        Xo, yo = X[mask], y[mask]
        base = np.mean((yo - tree.predict(Xo)) ** 2)
        used = set(tree.used_features().tolist())
        inc = np.zeros(m)
        for f in range(m):
            perm = rng.permutation(len(yo))
            if f not in used:
                continue
            Xp = Xo.copy()
            Xp[:, f] = Xo[perm, f]
            inc[f] = np.mean((yo - tree.predict(Xp)) ** 2) - base
        rows.append(inc)
    if not rows:
        raise NoOOBData("no tree has out-of-bag samples")
    D = np.array(rows)
    mean = D.mean(axis=0)
    if len(D) < 2:
        return mean
    sd = D.std(axis=0, ddof=1)
    return np.where(sd > 0, mean / np.where(sd > 0, sd, 1.0), mean)


def importance_split(forest: Forest) -> np.ndarray:
    """Total SSE reduction of the splits on each feature, averaged over trees."""
    m = forest.X.shape[1]
    out = np.zeros(m)
    for tree in forest.trees:
        inner = tree.feature >= 0
        out += np.bincount(tree.feature[inner], weights=tree.gain[inner], minlength=m)
    return out / forest.n_trees
