"""Beam-measurement imputation and directed beam search for distributed
mmWave MIMO deployments.

Generates synthetic per-UE L1-RSRP grids, simulates partial beam sounding
by random masking, imputes the missing measurements (random forest,
iterative forest, conditional GAN), runs a two-stage top-k directed beam
search and evaluates it against the true best beam.
"""

from .cgan import GanConfig, Normalizer, cgan_impute, gen_forward, pretrain_generator, train_gan
from .dataio import Dataset, MaskedSample, apply_mask, load_dataset, oversample, save_dataset, split
from .errors import BeamfillError, ConfigurationError, ReportError, StateError
from .evaluation import build_report, cdf_points, gap_percentiles, wasserstein1
from .forest import Forest, ForestHyper, RandomForestImputer, fit_forest, fit_tree, predict, rf_impute
from .missforest import mean_mode_init, mf_impute
from .pipeline import (
    SearchOutcome,
    TrainedModels,
    random_baseline,
    run_sweep,
    select_topk,
    stage1_infer,
    stage2_resolve,
)
from .scenario import BeamIndex, RsrpSample, ScenarioConfig, generate_scenario, rsrp_of

__version__ = "0.1.0"
