"""Two-stage directed beam search over masked measurement grids.

Stage 1 imputes the unmeasured beams with a trained model, Stage 2 scans
the top-k imputed candidates (ground truth lookup simulates the scan),
and the final beam is the best *measured* value among the initially
sounded set and the scanned candidates. Includes a random-scan baseline
and a factorial sweep over (model, masking fraction, k).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cgan import Normalizer, cgan_impute
from .dataio import Dataset, MaskedSample, mask_count, oversample
from .errors import StateError
from .forest import ForestHyper, RandomForestImputer
from .missforest import mf_impute
from .neuralnet import NetParams
from .scenario import BeamIndex

MODEL_NAMES = ("rf", "mf", "cgan", "mean", "random")


@dataclass
class SearchOutcome:
    ue_id: int
    model: str
    p: float
    k: int
    x_sounded: int
    stage1_indices: np.ndarray
    stage2_indices: np.ndarray
    chosen: BeamIndex
    achieved_rsrp: float
    true_best_rsrp: float
    gap: float


@dataclass
class TrainedModels:
    """Artifacts shared by the sweep; unused models may stay None."""

    m: int
    n: int
    train_p: float
    column_means: np.ndarray = None
    rf: RandomForestImputer = None
    cgan_gen: NetParams = None
    cgan_normalizer: Normalizer = None
    cgan_clamp: tuple = None
    mf_hyper: ForestHyper = None
    mf_max_iter: int = 10
    mf_seed: int = 0
    train_masked: np.ndarray = None  # train rows at train_p, NaN at masked slots

    @property
    def grid_size(self) -> int:
        return self.m * self.n


@dataclass
class PreparedArtifacts:
    """Per-masking-fraction state used by stage-1 inference."""

    trained: TrainedModels
    p: float
    eval_seed: int
    mf_imputed: np.ndarray = None


def prepare_stage1(trained: TrainedModels, masked_rows, p: float, eval_seed: int, models) -> PreparedArtifacts:
    """Precompute whatever stage-1 inference needs at this masking fraction.

    MissForest is transductive: the masked test rows are imputed jointly
    with the masked training rows in one matrix, then the test block is
    kept, keyed by row position.
    """
    art = PreparedArtifacts(trained=trained, p=p, eval_seed=eval_seed)
    if "mf" in models:
        if trained.train_masked is None:
            raise StateError("mf model requires the masked training matrix")
        test_block = np.vstack([r.observed for r in masked_rows])
        joint = np.vstack([trained.train_masked, test_block])
        completed, _ = mf_impute(
            joint, hyper=trained.mf_hyper, max_iter=trained.mf_max_iter, seed=trained.mf_seed
        )
        art.mf_imputed = completed[trained.train_masked.shape[0] :]
    return art


def stage1_infer(row: MaskedSample, model: str, artifacts: PreparedArtifacts, row_id: int = 0) -> np.ndarray:
    """Predict the full grid for one masked row with the named model.

    Every model passes observed values through unchanged.
    """
    trained = artifacts.trained
    if model == "mean":
        if trained.column_means is None:
            raise StateError("mean model is not trained")
        grid = np.where(row.mask, trained.column_means, row.observed)
    elif model == "rf":
        if trained.rf is None:
            raise StateError("rf model is not trained")
        grid = trained.rf.impute(row.observed, row.mask)
    elif model == "mf":
        if artifacts.mf_imputed is None:
            raise StateError("mf imputation was not prepared for this masking fraction")
        grid = artifacts.mf_imputed[row_id].copy()
    elif model == "cgan":
        if trained.cgan_gen is None or trained.cgan_normalizer is None:
            raise StateError("cgan model is not trained")
        p_key = int(round(artifacts.p * 1_000_000))
        grid = cgan_impute(
            trained.cgan_gen,
            row,
            trained.cgan_normalizer,
            z_seed=(artifacts.eval_seed & 0xFFFFFFFFFFFFFFFF, p_key, row_id),
            clamp=trained.cgan_clamp,
        )
    else:
        raise ValueError(f"model {model!r} has no stage-1 inference")
    grid = np.asarray(grid, dtype=float)
    grid[~row.mask] = row.observed[~row.mask]
    return grid


def select_topk(predicted: np.ndarray, mask: np.ndarray, k: int) -> np.ndarray:
    """The k masked indices with the highest predicted values.

    Ties break toward the lowest flat index; the result is sorted by
    descending predicted value. k beyond the masked count is truncated
    with a warning.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    predicted = np.asarray(predicted, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    masked_idx = np.flatnonzero(mask)
    if k > masked_idx.size:
        warnings.warn(
            f"k={k} exceeds the {masked_idx.size} masked entries; truncating", stacklevel=2
        )
        k = masked_idx.size
    order = np.argsort(-predicted[masked_idx], kind="stable")
    return masked_idx[order[:k]]


@dataclass
class Stage2Result:
    chosen_flat: int
    achieved_rsrp: float
    true_best_rsrp: float
    gap: float


def stage2_resolve(row: MaskedSample, candidates) -> Stage2Result:
    """Scan the candidates (truth lookup) and pick the best measured beam.

    The decision pool is the initially sounded set plus the scanned
    candidates; predictions themselves never decide.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size and not row.mask[candidates].all():
        raise ValueError("stage-2 candidates must be masked (not yet measured) beams")
    observed_idx = np.flatnonzero(~row.mask)
    pool = np.unique(np.concatenate([observed_idx, candidates]))
    vals = row.truth[pool]
    chosen_flat = int(pool[np.argmax(vals)])  # first max = lowest flat index
    achieved = float(row.truth[chosen_flat])
    true_best = float(row.truth.max())
    return Stage2Result(
        chosen_flat=chosen_flat,
        achieved_rsrp=achieved,
        true_best_rsrp=true_best,
        gap=true_best - achieved,
    )


def _random_candidates(row: MaskedSample, seed) -> np.ndarray:
    """A full random ordering of the masked indices; prefixes give nested
    candidate sets so the gap stays monotone in k."""
    masked_idx = np.flatnonzero(row.mask)
    return np.random.default_rng(seed).permutation(masked_idx)


def random_baseline(
    row: MaskedSample, k: int, seed, p: float = float("nan"), beams_per_ap: int = None
) -> SearchOutcome:
    """Random search: scan k masked beams drawn without replacement."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    perm = _random_candidates(row, seed)
    if k > perm.size:
        warnings.warn(f"k={k} exceeds the {perm.size} masked entries; truncating", stacklevel=2)
        k = perm.size
    candidates = perm[:k]
    n = beams_per_ap if beams_per_ap is not None else row.mask.size
    return _assemble_outcome(row, "random", p, k, candidates, ue_id=row.source_row, beams_per_ap=n)


def _assemble_outcome(row, model, p, k, candidates, ue_id, beams_per_ap) -> SearchOutcome:
    res = stage2_resolve(row, candidates)
    return SearchOutcome(
        ue_id=ue_id,
        model=model,
        p=p,
        k=int(k),
        x_sounded=int((~row.mask).sum()),
        stage1_indices=np.flatnonzero(~row.mask),
        stage2_indices=np.asarray(candidates, dtype=np.int64),
        chosen=BeamIndex.from_flat(res.chosen_flat, beams_per_ap),
        achieved_rsrp=res.achieved_rsrp,
        true_best_rsrp=res.true_best_rsrp,
        gap=res.gap,
    )


def run_sweep(
    test_split: Dataset,
    models,
    ps,
    ks,
    trained: TrainedModels,
    seeds,
    oversample_factor: int = 1,
) -> list:
    """Full factorial over (model, masking fraction, k) on the test split.

    Imputation runs once per (row, model, p) and is shared across k.
    Outcomes come back ordered by (row, model, p, k).
    """
    models = list(models)
    ps = list(ps)
    ks = [int(k) for k in ks]
    if not models or not ps or not ks:
        raise ValueError("models, ps and ks must all be non-empty")
    for model in models:
        if model not in MODEL_NAMES:
            raise ValueError(f"unknown model {model!r}; valid: {MODEL_NAMES}")
    if any(k < 1 for k in ks):
        raise ValueError("every k must be >= 1")
    eval_seed = int(seeds["eval"] if isinstance(seeds, dict) else seeds)

    outcomes = []
    for p in ps:
        p_key = int(round(p * 1_000_000))
        mask_seed = int(np.random.default_rng((eval_seed & 0xFFFFFFFFFFFFFFFF, p_key)).integers(1, 2**63 - 1))
        masked = oversample(test_split, oversample_factor, p, seed=mask_seed)
        art = prepare_stage1(trained, masked.rows, p, eval_seed, models)
        for model in models:
            if model == "random":
                for row_id, row in enumerate(masked.rows):
                    perm = _random_candidates(
                        row, (eval_seed & 0xFFFFFFFFFFFFFFFF, p_key, row_id, 7)
                    )
                    for k in ks:
                        kk = min(k, perm.size)
                        outcomes.append(
                            _assemble_outcome(
                                row, model, p, k, perm[:kk], ue_id=row_id, beams_per_ap=trained.n
                            )
                        )
            else:
                for row_id, row in enumerate(masked.rows):
                    predicted = stage1_infer(row, model, art, row_id)
                    for k in ks:
                        candidates = select_topk(predicted, row.mask, k)
                        outcomes.append(
                            _assemble_outcome(
                                row, model, p, k, candidates, ue_id=row_id, beams_per_ap=trained.n
                            )
                        )
    outcomes.sort(key=lambda o: (o.ue_id, o.model, o.p, o.k))
    return outcomes


# ---------------------------------------------------------------------------
# Outcome table persistence
# ---------------------------------------------------------------------------

_CSV_HEADER = [
    "ue_id",
    "model",
    "p",
    "k",
    "x_sounded",
    "stage1_indices",
    "stage2_indices",
    "chosen_ap",
    "chosen_beam",
    "chosen_flat",
    "achieved_rsrp",
    "true_best_rsrp",
    "gap",
]


def outcomes_to_csv(outcomes, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for o in outcomes:
            w.writerow(
                [
                    o.ue_id,
                    o.model,
                    repr(float(o.p)),
                    o.k,
                    o.x_sounded,
                    ";".join(str(i) for i in o.stage1_indices),
                    ";".join(str(i) for i in o.stage2_indices),
                    o.chosen.ap,
                    o.chosen.beam,
                    o.chosen.flat,
                    repr(float(o.achieved_rsrp)),
                    repr(float(o.true_best_rsrp)),
                    repr(float(o.gap)),
                ]
            )


def outcomes_from_csv(path, beams_per_ap: int) -> list:
    out = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            idx1 = np.array([int(v) for v in rec[5].split(";") if v], dtype=np.int64)
            idx2 = np.array([int(v) for v in rec[6].split(";") if v], dtype=np.int64)
            out.append(
                SearchOutcome(
                    ue_id=int(rec[0]),
                    model=rec[1],
                    p=float(rec[2]),
                    k=int(rec[3]),
                    x_sounded=int(rec[4]),
                    stage1_indices=idx1,
                    stage2_indices=idx2,
                    chosen=BeamIndex.from_flat(int(rec[9]), beams_per_ap),
                    achieved_rsrp=float(rec[10]),
                    true_best_rsrp=float(rec[11]),
                    gap=float(rec[12]),
                )
            )
    return out
