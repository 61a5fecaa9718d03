"""Regression trees and bagged random forests, built from scratch.

Trees are stored as flat node arrays (feature, threshold, children, leaf
value) which serialize exactly and traverse fast. Induction is greedy
variance reduction over all midpoints between consecutive distinct values
of ``mtry`` randomly chosen candidate features per node; the hot loops are
JIT-compiled with numba.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

FOREST_FORMAT_VERSION = 1
_UNLIMITED_DEPTH = 1 << 60


@dataclass(frozen=True)
class ForestHyper:
    """Forest hyperparameters; ``mtry=None`` means ceil(features / 3)."""

    n_trees: int = 100
    mtry: int | None = None
    min_leaf: int = 5
    max_depth: int | None = None
    bootstrap: bool = True  # disabled only as a test hook

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf < 1:
            raise ValueError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError(f"mtry must be >= 1, got {self.mtry}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return math.ceil(n_features / 3)
        return min(self.mtry, n_features)

    def resolved_depth(self) -> int:
        return _UNLIMITED_DEPTH if self.max_depth is None else self.max_depth


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] < 0`` marks node i as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size


@dataclass
class Forest:
    trees: list
    per_tree_seed: list
    hyper: ForestHyper
    n_features: int
    _packed: tuple = field(default=None, repr=False, compare=False)

    def packed(self):
        """Concatenated node arrays + per-tree offsets, built once."""
        if self._packed is None:
            offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                offsets[i + 1] = offsets[i] + t.n_nodes
            self._packed = (
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.value for t in self.trees]),
                np.concatenate([t.count for t in self.trees]),
                offsets,
            )
        return self._packed


@njit(cache=True)
def _grow_tree(X, y, sample_idx, mtry, min_leaf, max_depth, feat_seed):
    n_samples = sample_idx.size
    n_features = X.shape[1]
    cap = 2 * n_samples + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)
    count = np.zeros(cap, np.int64)
    work = sample_idx.copy()
    buf = np.empty(n_samples, np.int64)
    stack = np.empty((cap, 4), np.int64)  # node, start, end, depth
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_samples
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    state = np.uint64(feat_seed) if feat_seed != 0 else np.uint64(0x9E3779B97F4A7C15)
    featpool = np.arange(n_features)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        tot = 0.0
        tot2 = 0.0
        for i in range(start, end):
            yv = y[work[i]]
            tot += yv
            tot2 += yv * yv
        value[node] = tot / m
        count[node] = m
        var = tot2 - tot * tot / m
        if m < 2 * min_leaf or depth >= max_depth or var <= 1e-12 * max(tot2 / m, 1.0):
            continue
        # draw mtry distinct candidate features (partial Fisher-Yates,
        # xorshift64 state), then scan them in ascending index order so
        # ties resolve deterministically
        k = mtry if mtry < n_features else n_features
        for j in range(k):
            state ^= state << np.uint64(13)
            state ^= state >> np.uint64(7)
            state ^= state << np.uint64(17)
            r = j + int(state % np.uint64(n_features - j))
            tmp = featpool[j]
            featpool[j] = featpool[r]
            featpool[r] = tmp
        chosen = np.sort(featpool[:k].copy())
        best_gain = -np.inf
        best_feature = -1
        best_threshold = 0.0
        vals = np.empty(m, np.float64)
        ys = np.empty(m, np.float64)
        for jj in range(k):
            f = chosen[jj]
            for i in range(m):
                vals[i] = X[work[start + i], f]
            order = np.argsort(vals)
            for i in range(m):
                ys[i] = y[work[start + order[i]]]
            sum_left = 0.0
            for pos in range(1, m):
                sum_left += ys[pos - 1]
                v_lo = vals[order[pos - 1]]
                v_hi = vals[order[pos]]
                if v_lo == v_hi:
                    continue
                if pos < min_leaf or m - pos < min_leaf:
                    continue
                sum_right = tot - sum_left
                gain = sum_left * sum_left / pos + sum_right * sum_right / (m - pos)
                if gain > best_gain:
                    best_gain = gain
                    best_feature = f
                    best_threshold = 0.5 * (v_lo + v_hi)
        if best_feature < 0:
            continue
        # stable partition: left = x <= threshold, order preserved
        nl = 0
        for i in range(start, end):
            if X[work[i], best_feature] <= best_threshold:
                buf[nl] = work[i]
                nl += 1
        nr = nl
        for i in range(start, end):
            if X[work[i], best_feature] > best_threshold:
                buf[nr] = work[i]
                nr += 1
        for i in range(m):
            work[start + i] = buf[i]
        feature[node] = best_feature
        threshold[node] = best_threshold
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack[top, 0] = lc
        stack[top, 1] = start
        stack[top, 2] = start + nl
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = rc
        stack[top, 1] = start + nl
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
    )


@njit(cache=True)
def _predict_packed(feature, threshold, left, right, value, offsets, X, out):
    n_trees = offsets.size - 1
    n_rows = X.shape[0]
    for r in range(n_rows):
        acc = 0.0
        for t in range(n_trees):
            node = offsets[t]
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = offsets[t] + left[node]
                else:
                    node = offsets[t] + right[node]
            acc += value[node]
        out[r] = acc / n_trees
    return out


def _check_training_data(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-d matrix")
    if y.ndim != 1 or y.size != X.shape[0]:
        raise ValueError(f"y length {y.size} does not match {X.shape[0]} rows")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise ValueError("training data must not contain missing or non-finite values")
    return X, y


def fit_tree(X, y, hyper: ForestHyper = None, seed: int = 0) -> Tree:
    """Grow one regression tree on the full data (no bootstrap)."""
    hyper = hyper or ForestHyper()
    X, y = _check_training_data(X, y)
    arrays = _grow_tree(
        X,
        y,
        np.arange(X.shape[0], dtype=np.int64),
        hyper.resolved_mtry(X.shape[1]),
        hyper.min_leaf,
        hyper.resolved_depth(),
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
    )
    return Tree(*arrays)


def fit_forest(X, y, hyper: ForestHyper = None, seed: int = 0) -> Forest:
    """Bagged forest: each tree fits a same-size bootstrap resample."""
    hyper = hyper or ForestHyper()
    X, y = _check_training_data(X, y)
    n = X.shape[0]
    seed_rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    per_tree_seed = [int(s) for s in seed_rng.integers(1, 2**63 - 1, size=hyper.n_trees)]
    mtry = hyper.resolved_mtry(X.shape[1])
    depth = hyper.resolved_depth()
    trees = []
    for tree_seed in per_tree_seed:
        if hyper.bootstrap:
            idx = np.random.default_rng(tree_seed).integers(0, n, size=n, dtype=np.int64)
        else:
            idx = np.arange(n, dtype=np.int64)
        arrays = _grow_tree(X, y, idx, mtry, hyper.min_leaf, depth, np.uint64(tree_seed))
        trees.append(Tree(*arrays))
    return Forest(trees=trees, per_tree_seed=per_tree_seed, hyper=hyper, n_features=X.shape[1])


def predict_tree(tree: Tree, x) -> float:
    x = np.asarray(x, dtype=float)
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return float(tree.value[node])


def predict(forest: Forest, x) -> float:
    """Mean of tree predictions; exact-sum so tree order cannot matter."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != forest.n_features:
        raise ValueError(f"expected feature vector of length {forest.n_features}, got shape {x.shape}")
    return math.fsum(predict_tree(t, x) for t in forest.trees) / len(forest.trees)


def predict_matrix(forest: Forest, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"expected matrix with {forest.n_features} columns, got shape {X.shape}")
    feature, threshold, left, right, value, _, offsets = forest.packed()
    out = np.empty(X.shape[0], dtype=np.float64)
    return _predict_packed(feature, threshold, left, right, value, offsets, X, out)


# ---------------------------------------------------------------------------
# Missing-value imputation with per-column forests
# ---------------------------------------------------------------------------

def column_mean_fill(observed: np.ndarray):
    """Fill NaNs with column means (global mean for all-NaN columns).

    Returns (filled, col_means, fallback_columns).
    """
    observed = np.asarray(observed, dtype=float)
    if np.isnan(observed).all():
        raise ValueError("matrix has no observed entries")
    with np.errstate(invalid="ignore"):
        col_means = np.nanmean(observed, axis=0)
    global_mean = float(np.nanmean(observed))
    fallback = np.flatnonzero(np.isnan(col_means))
    col_means = np.where(np.isnan(col_means), global_mean, col_means)
    filled = observed.copy()
    nan_r, nan_c = np.where(np.isnan(filled))
    filled[nan_r, nan_c] = col_means[nan_c]
    return filled, col_means, fallback


class RandomForestImputer:
    """One forest per column, trained on mean-filled rows where that column
    is observed; imputes masked entries of new rows from their mean-filled
    feature vector."""

    def __init__(self, hyper: ForestHyper = None, seed: int = 0):
        self.hyper = hyper or ForestHyper()
        self.seed = seed
        self.forests_ = None
        self.col_means_ = None
        self.mean_fallback_columns_ = None
        self.n_columns_ = None

    def fit(self, observed: np.ndarray) -> "RandomForestImputer":
        observed = np.asarray(observed, dtype=float)
        if observed.ndim != 2 or observed.shape[0] == 0:
            raise ValueError("training matrix must be non-empty and 2-d")
        filled, col_means, fallback = column_mean_fill(observed)
        d = observed.shape[1]
        seeds = np.random.default_rng(self.seed & 0xFFFFFFFFFFFFFFFF).integers(1, 2**63 - 1, size=d)
        forests = {}
        fallback_set = set(int(c) for c in fallback)
        for col in range(d):
            if col in fallback_set:
                continue  # never observed: impute with the global mean
            obs_rows = np.flatnonzero(~np.isnan(observed[:, col]))
            features = np.delete(filled[obs_rows], col, axis=1)
            forests[col] = fit_forest(features, filled[obs_rows, col], self.hyper, int(seeds[col]))
        self.forests_ = forests
        self.col_means_ = col_means
        self.mean_fallback_columns_ = np.asarray(sorted(fallback_set), dtype=np.int64)
        self.n_columns_ = d
        return self

    def _require_fit(self):
        if self.forests_ is None:
            raise ValueError("imputer is not fitted")

    def impute(self, observed_row: np.ndarray, mask: np.ndarray = None) -> np.ndarray:
        self._require_fit()
        row = np.asarray(observed_row, dtype=float).reshape(-1)
        if row.size != self.n_columns_:
            raise ValueError(f"row length {row.size} != {self.n_columns_} training columns")
        mask = np.isnan(row) if mask is None else np.asarray(mask, dtype=bool)
        return self.impute_matrix(row[None, :], mask[None, :])[0]

    def impute_matrix(self, observed_rows: np.ndarray, masks: np.ndarray = None) -> np.ndarray:
        self._require_fit()
        rows = np.asarray(observed_rows, dtype=float)
        masks = np.isnan(rows) if masks is None else np.asarray(masks, dtype=bool)
        out = rows.copy()
        filled = np.where(masks, self.col_means_[None, :], rows)
        all_masked = masks.all(axis=1)
        for col in range(self.n_columns_):
            need = np.flatnonzero(masks[:, col] & ~all_masked)
            if need.size == 0:
                continue
            if col in self.forests_:
                features = np.delete(filled[need], col, axis=1)
                out[need, col] = predict_matrix(self.forests_[col], features)
            else:
                out[need, col] = self.col_means_[col]
        # no-information rows fall back to the training column means
        out[all_masked] = self.col_means_[None, :]
        return out

    def state_dict(self) -> dict:
        """Flat array mapping for exact checkpointing (one key space per column)."""
        self._require_fit()
        state = {
            "imputer_meta": np.array([FOREST_FORMAT_VERSION, self.n_columns_, self.seed], dtype=np.int64),
            "imputer_col_means": self.col_means_,
            "imputer_fallback": self.mean_fallback_columns_,
            "imputer_forest_cols": np.array(sorted(self.forests_), dtype=np.int64),
        }
        for col, forest in self.forests_.items():
            for key, arr in forest_state(forest).items():
                state[f"c{col:05d}_{key}"] = arr
        return state

    @classmethod
    def from_state(cls, state: dict) -> "RandomForestImputer":
        meta = state["imputer_meta"]
        if int(meta[0]) != FOREST_FORMAT_VERSION:
            raise ValueError(f"unsupported imputer format version {int(meta[0])}")
        imputer = cls(seed=int(meta[2]))
        imputer.n_columns_ = int(meta[1])
        imputer.col_means_ = np.asarray(state["imputer_col_means"], dtype=float)
        imputer.mean_fallback_columns_ = np.asarray(state["imputer_fallback"], dtype=np.int64)
        forests = {}
        for col in state["imputer_forest_cols"]:
            col = int(col)
            prefix = f"c{col:05d}_"
            sub = {k[len(prefix) :]: v for k, v in state.items() if k.startswith(prefix)}
            forests[col] = forest_from_state(sub)
        imputer.forests_ = forests
        if forests:
            imputer.hyper = next(iter(forests.values())).hyper
        return imputer


def rf_impute(train_observed: np.ndarray, row, hyper: ForestHyper = None, seed: int = 0) -> np.ndarray:
    """One-shot convenience: fit per-column forests on ``train_observed``
    (NaN = missing) and impute the masked entries of one sample."""
    imputer = RandomForestImputer(hyper=hyper, seed=seed).fit(train_observed)
    return imputer.impute(row.observed, row.mask)


# ---------------------------------------------------------------------------
# Serialization (exact round-trip)
# ---------------------------------------------------------------------------

def forest_state(forest: Forest) -> dict:
    feature, threshold, left, right, value, count, offsets = forest.packed()
    depth = -1 if forest.hyper.max_depth is None else forest.hyper.max_depth
    mtry = -1 if forest.hyper.mtry is None else forest.hyper.mtry
    meta = np.array(
        [
            FOREST_FORMAT_VERSION,
            forest.n_features,
            forest.hyper.n_trees,
            mtry,
            forest.hyper.min_leaf,
            depth,
            1 if forest.hyper.bootstrap else 0,
        ],
        dtype=np.int64,
    )
    return {
        "meta": meta,
        "feature": feature,
        "threshold": threshold,
        "left": left,
        "right": right,
        "value": value,
        "count": count,
        "tree_offsets": offsets,
        "per_tree_seed": np.asarray(forest.per_tree_seed, dtype=np.int64),
    }


def forest_from_state(state: dict) -> Forest:
    meta = state["meta"]
    if int(meta[0]) != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {int(meta[0])}")
    hyper = ForestHyper(
        n_trees=int(meta[2]),
        mtry=None if int(meta[3]) < 0 else int(meta[3]),
        min_leaf=int(meta[4]),
        max_depth=None if int(meta[5]) < 0 else int(meta[5]),
        bootstrap=bool(meta[6]),
    )
    offsets = np.asarray(state["tree_offsets"], dtype=np.int64)
    trees = []
    for i in range(offsets.size - 1):
        lo, hi = offsets[i], offsets[i + 1]
        trees.append(
            Tree(
                feature=np.asarray(state["feature"][lo:hi], dtype=np.int64),
                threshold=np.asarray(state["threshold"][lo:hi], dtype=np.float64),
                left=np.asarray(state["left"][lo:hi], dtype=np.int64),
                right=np.asarray(state["right"][lo:hi], dtype=np.int64),
                value=np.asarray(state["value"][lo:hi], dtype=np.float64),
                count=np.asarray(state["count"][lo:hi], dtype=np.int64),
            )
        )
    return Forest(
        trees=trees,
        per_tree_seed=[int(s) for s in state["per_tree_seed"]],
        hyper=hyper,
        n_features=int(meta[1]),
    )


def save_forest(forest: Forest, path) -> None:
    np.savez(Path(path), **forest_state(forest))


def load_forest(path) -> Forest:
    with np.load(Path(path)) as data:
        return forest_from_state({k: data[k] for k in data.files})
