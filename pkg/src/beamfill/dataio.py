"""Dataset containers, random masking, oversampling, splitting, persistence.

Masked entries are NaN in memory and empty cells on disk. All CSV floats
are written with ``repr`` so parse(serialize(x)) is bit-exact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import RsrpSample

SPLIT_TAGS = ("train", "test", "unsplit")


@dataclass
class MaskedSample:
    """One grid with simulated missing measurements.

    ``mask`` is True where the entry is masked (unobserved); ``observed``
    carries NaN there and the true value elsewhere.
    """

    observed: np.ndarray
    mask: np.ndarray
    truth: np.ndarray
    source_row: int


@dataclass
class Dataset:
    """A list of measurement rows plus generation metadata."""

    meta: dict
    rows: list
    split_tag: str = "unsplit"

    @property
    def m(self) -> int:
        return int(self.meta["m"])

    @property
    def n(self) -> int:
        return int(self.meta["n"])

    @property
    def grid_size(self) -> int:
        return self.m * self.n

    def __len__(self) -> int:
        return len(self.rows)


def mask_count(p: float, grid_size: int) -> int:
    """Number of masked entries: round(p * grid_size), half rounds up."""
    return int(np.floor(p * grid_size + 0.5))


def _source_id(row) -> int:
    return row.source_row if isinstance(row, MaskedSample) else row.ue_id


def _mask_grid(truth: np.ndarray, source_row: int, p: float, rng) -> MaskedSample:
    grid_size = truth.size
    n_masked = mask_count(p, grid_size)
    chosen = rng.choice(grid_size, size=n_masked, replace=False)
    mask = np.zeros(grid_size, dtype=bool)
    mask[chosen] = True
    observed = truth.astype(float).copy()
    observed[mask] = np.nan
    return MaskedSample(observed=observed, mask=mask, truth=truth.astype(float).copy(), source_row=source_row)


def apply_mask(row: RsrpSample, p: float, rng_seed) -> MaskedSample:
    """Mask exactly round(p * M*N) entries chosen uniformly without replacement."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"masking fraction must lie in [0, 1], got {p}")
    rng = np.random.default_rng(rng_seed)
    return _mask_grid(np.asarray(row.grid, dtype=float), row.ue_id, p, rng)


def oversample(ds: Dataset, factor: int, p: float, seed: int) -> Dataset:
    """Repeat every row ``factor`` times with independently drawn masks."""
    if factor < 1:
        raise ValueError(f"oversampling factor must be >= 1, got {factor}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"masking fraction must lie in [0, 1], got {p}")
    out = []
    for row in ds.rows:
        truth = row.truth if isinstance(row, MaskedSample) else np.asarray(row.grid, dtype=float)
        source = _source_id(row)
        for replica in range(factor):
            rng = np.random.default_rng((seed & 0xFFFFFFFFFFFFFFFF, source, replica))
            out.append(_mask_grid(truth, source, p, rng))
    return Dataset(meta=dict(ds.meta), rows=out, split_tag=ds.split_tag)


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split by source row so no replica of one grid lands on both sides."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    sources = sorted({_source_id(r) for r in ds.rows})
    if len(sources) < 2:
        raise ValueError("need at least 2 distinct source rows to split")
    n_test = int(np.floor(test_fraction * len(sources) + 0.5))
    n_test = min(max(n_test, 1), len(sources) - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sources))
    test_ids = {sources[i] for i in order[:n_test]}
    train_rows = [r for r in ds.rows if _source_id(r) not in test_ids]
    test_rows = [r for r in ds.rows if _source_id(r) in test_ids]
    train = Dataset(meta=dict(ds.meta), rows=train_rows, split_tag="train")
    test = Dataset(meta=dict(ds.meta), rows=test_rows, split_tag="test")
    return train, test


def masked_matrix(ds: Dataset) -> np.ndarray:
    """Stack MaskedSample rows into a (rows, M*N) matrix with NaN at masked slots."""
    return np.vstack([r.observed for r in ds.rows])


def truth_matrix(ds: Dataset) -> np.ndarray:
    return np.vstack([r.truth if isinstance(r, MaskedSample) else r.grid for r in ds.rows])


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: Dataset, out_dir) -> None:
    """Write meta.json plus grids.csv (ue_id, x, y, azimuth, rsrp_0..)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "meta.json", "w") as fh:
        json.dump({**ds.meta, "split_tag": ds.split_tag, "rows": len(ds.rows)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    grid_size = ds.grid_size
    header = ["ue_id", "x", "y", "azimuth"] + [f"rsrp_{i}" for i in range(grid_size)]
    with open(out / "grids.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in ds.rows:
            w.writerow(
                [row.ue_id, _fmt(row.position[0]), _fmt(row.position[1]), _fmt(row.orientation_deg)]
                + [_fmt(v) for v in row.grid]
            )


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    with open(src / "meta.json") as fh:
        meta = json.load(fh)
    split_tag = meta.pop("split_tag", "unsplit")
    meta.pop("rows", None)
    rows = []
    with open(src / "grids.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            rows.append(
                RsrpSample(
                    ue_id=int(rec[0]),
                    position=(float(rec[1]), float(rec[2])),
                    orientation_deg=float(rec[3]),
                    grid=np.array([float(v) for v in rec[4:]], dtype=float),
                )
            )
    return Dataset(meta=meta, rows=rows, split_tag=split_tag)


def save_masked(ds: Dataset, out_dir, p: float, factor: int, seed: int) -> None:
    """Write masked.csv (empty cells where masked), truth.csv, manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "p": p,
        "factor": factor,
        "seed": seed,
        "split_tag": ds.split_tag,
        "m": ds.m,
        "n": ds.n,
        "rows": len(ds.rows),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    grid_size = ds.grid_size
    header = ["row_id", "source_row"] + [f"rsrp_{i}" for i in range(grid_size)]
    with open(out / "masked.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(ds.rows):
            cells = ["" if row.mask[j] else _fmt(row.observed[j]) for j in range(grid_size)]
            w.writerow([i, row.source_row] + cells)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(ds.rows):
            w.writerow([i, row.source_row] + [_fmt(v) for v in row.truth])


def load_masked(in_dir) -> Dataset:
    src = Path(in_dir)
    with open(src / "manifest.json") as fh:
        manifest = json.load(fh)
    truths = {}
    with open(src / "truth.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            truths[int(rec[0])] = (int(rec[1]), np.array([float(v) for v in rec[2:]], dtype=float))
    rows = []
    with open(src / "masked.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            row_id = int(rec[0])
            source = int(rec[1])
            observed = np.array([np.nan if v == "" else float(v) for v in rec[2:]], dtype=float)
            mask = np.isnan(observed)
            rows.append(MaskedSample(observed=observed, mask=mask, truth=truths[row_id][1], source_row=source))
    meta = {"format_version": manifest["format_version"], "m": manifest["m"], "n": manifest["n"]}
    return Dataset(meta=meta, rows=rows, split_tag=manifest.get("split_tag", "unsplit"))
