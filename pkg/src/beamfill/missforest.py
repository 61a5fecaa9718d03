"""Iterative random-forest imputation.

Starts from a column-mean fill, then repeatedly re-imputes every
incomplete column (in order of increasing missingness) with a forest
trained on that column's observed entries, until the normalized sum of
squared differences between successive imputations increases or the
iteration limit is reached. When the difference increases, the matrix
from the previous iteration is returned.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .forest import ForestHyper, column_mean_fill, fit_forest, predict_matrix


def mean_mode_init(matrix: np.ndarray) -> np.ndarray:
    """Fill missing (NaN) entries with their column mean.

    Columns with no observed entry fall back to the global mean of all
    observed values. All data here is continuous, so there is no mode step.
    """
    filled, _, fallback = column_mean_fill(matrix)
    if fallback.size:
        import warnings

        warnings.warn(
            f"{fallback.size} column(s) had no observed entries; filled with the global mean",
            stacklevel=2,
        )
    return filled


def mf_impute(
    matrix: np.ndarray,
    hyper: ForestHyper = None,
    max_iter: int = 10,
    seed: int = 0,
    snapshot_dir=None,
):
    """Impute a (rows, columns) matrix with NaNs marking missing entries.

    Returns (completed_matrix, diff_history). ``diff_history`` holds the
    normalized squared difference sum((new-old)^2)/sum(new^2), computed
    over imputed positions only, for every completed iteration.
    ``max_iter=0`` returns the column-mean initialization directly.
    """
    if max_iter < 0:
        raise ValueError(f"max_iter must be >= 0, got {max_iter}")
    hyper = hyper or ForestHyper()
    matrix = np.asarray(matrix, dtype=float)
    mask = np.isnan(matrix)
    if not mask.any():
        return matrix.copy(), []
    filled, _, _ = column_mean_fill(matrix)
    if max_iter == 0:
        return filled, []

    missing_per_col = mask.sum(axis=0)
    todo = np.flatnonzero(missing_per_col > 0)
    # ascending missingness; stable sort keeps ties in column order
    todo = todo[np.argsort(missing_per_col[todo], kind="stable")]
    # columns observed nowhere stay at their global-mean fill
    todo = np.asarray([c for c in todo if missing_per_col[c] < matrix.shape[0]], dtype=np.int64)

    diff_history = []
    for iteration in range(1, max_iter + 1):
        previous = filled.copy()
        for col in todo:
            obs_rows = np.flatnonzero(~mask[:, col])
            mis_rows = np.flatnonzero(mask[:, col])
            features = np.delete(filled, col, axis=1)
            col_seed = int(
                np.random.default_rng((seed & 0xFFFFFFFFFFFFFFFF, iteration, int(col))).integers(
                    1, 2**63 - 1
                )
            )
            forest = fit_forest(features[obs_rows], filled[obs_rows, col], hyper, col_seed)
            filled[mis_rows, col] = predict_matrix(forest, features[mis_rows])
        num = float(np.sum((filled[mask] - previous[mask]) ** 2))
        den = float(np.sum(filled[mask] ** 2))
        diff_history.append(num / den if den > 0 else 0.0)
        if snapshot_dir is not None:
            _dump_snapshot(filled, iteration, snapshot_dir)
        if len(diff_history) >= 2 and diff_history[-1] > diff_history[-2]:
            return previous, diff_history
    return filled, diff_history


def _dump_snapshot(matrix: np.ndarray, iteration: int, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"iteration_{iteration:03d}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
