"""Command-line entry point wiring the full experiment.

Subcommands: ``generate`` (synthetic dataset), ``train`` (rf / mf / cgan /
mean checkpoints), ``evaluate`` (factorial sweep + report files) and
``report`` (re-render from an existing outcome table). A single JSON
config drives everything; every field has a default so a zero-flag
``generate -> train -> evaluate`` run works out of the box.

Exit codes: 0 success, 2 configuration error, 3 missing-state error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio
from .cgan import GanConfig, Normalizer, pretrain_generator, train_gan
from .errors import ConfigurationError, StateError
from .evaluation import build_report
from .forest import ForestHyper, RandomForestImputer, column_mean_fill
from .neuralnet import load_net, net_from_state, net_state
from .pipeline import MODEL_NAMES, TrainedModels, outcomes_from_csv, outcomes_to_csv, run_sweep
from .scenario import ScenarioConfig, generate_scenario

DEFAULT_MODEL_BLOCKS = {
    "rf": {"n_trees": 40, "mtry": 24, "min_leaf": 5, "max_depth": 12},
    "mf": {"n_trees": 8, "mtry": 16, "min_leaf": 5, "max_depth": 10, "max_iter": 10},
    "cgan": {},
    "random": {},
}


@dataclass(frozen=True)
class MaskingPlan:
    train_p: float = 0.95
    test_ps: tuple = (0.95,)
    oversample_factor: int = 10
    split_fraction: float = 0.2

    def __post_init__(self):
        for p in (self.train_p, *self.test_ps):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"masking fraction {p} outside [0, 1]")
        if self.oversample_factor < 1:
            raise ConfigurationError("oversample_factor must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigurationError("split_fraction must lie in (0, 1)")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    masking: MaskingPlan
    models: dict
    ks: tuple = (1, 2, 4, 8, 16)
    seeds: dict = None
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.seeds is None:
            self.seeds = {"data": 1, "model": 2, "eval": 3}
        ks = [int(k) for k in self.ks]
        if ks != sorted(set(ks)):
            raise ConfigurationError(f"ks must be sorted ascending and unique, got {list(self.ks)}")
        self.ks = tuple(ks)
        for name in self.models:
            if name not in MODEL_NAMES:
                raise ConfigurationError(f"unknown model {name!r}; valid: {MODEL_NAMES}")


def default_experiment_config() -> ExperimentConfig:
    return ExperimentConfig(
        scenario=ScenarioConfig(),
        masking=MaskingPlan(),
        models={k: dict(v) for k, v in DEFAULT_MODEL_BLOCKS.items()},
    )


def load_experiment_config(path=None) -> ExperimentConfig:
    """Parse a JSON experiment config, merged over built-in defaults."""
    if path is None:
        return default_experiment_config()
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {p} is not valid JSON: {exc}") from exc
    scenario_kwargs = raw.get("scenario", {})
    if "area" in scenario_kwargs:
        scenario_kwargs["area"] = tuple(scenario_kwargs["area"])
    if "ap_positions" in scenario_kwargs and not isinstance(scenario_kwargs["ap_positions"], str):
        scenario_kwargs["ap_positions"] = tuple(tuple(q) for q in scenario_kwargs["ap_positions"])
    masking_kwargs = dict(raw.get("masking", {}))
    if "test_ps" in masking_kwargs:
        masking_kwargs["test_ps"] = tuple(masking_kwargs["test_ps"])
    models = raw.get("models")
    if models is None:
        models = {k: dict(v) for k, v in DEFAULT_MODEL_BLOCKS.items()}
    try:
        return ExperimentConfig(
            scenario=ScenarioConfig(**scenario_kwargs),
            masking=MaskingPlan(**masking_kwargs),
            models=models,
            ks=tuple(raw.get("ks", (1, 2, 4, 8, 16))),
            seeds=raw.get("seeds"),
            output_dir=raw.get("output_dir", "runs/default"),
        )
    except TypeError as exc:
        raise ConfigurationError(f"config file {p}: {exc}") from exc


# ---------------------------------------------------------------------------
# Shared data plumbing
# ---------------------------------------------------------------------------

def _derive_seed(*parts) -> int:
    return int(np.random.default_rng(tuple(int(v) & 0xFFFFFFFFFFFFFFFF for v in parts)).integers(1, 2**63 - 1))


def _dataset_dir(cfg) -> Path:
    return Path(cfg.output_dir) / "dataset"


def _models_dir(cfg) -> Path:
    return Path(cfg.output_dir) / "models"


def _load_dataset(cfg) -> dataio.Dataset:
    src = _dataset_dir(cfg)
    if not (src / "grids.csv").exists():
        raise StateError(f"no dataset at {src}; run the generate command first")
    return dataio.load_dataset(src)


def _split_and_mask_train(cfg, ds):
    train, test = dataio.split(ds, cfg.masking.split_fraction, seed=cfg.seeds["data"])
    masked_train = dataio.oversample(
        train,
        cfg.masking.oversample_factor,
        cfg.masking.train_p,
        seed=_derive_seed(cfg.seeds["data"], 101),
    )
    return train, test, masked_train


def _forest_hyper(block: dict) -> ForestHyper:
    keys = {"n_trees", "mtry", "min_leaf", "max_depth"}
    return ForestHyper(**{k: v for k, v in block.items() if k in keys})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig) -> int:
    scenario = dataclasses.replace(cfg.scenario, seed=cfg.seeds["data"])
    ds = generate_scenario(scenario)
    out = _dataset_dir(cfg)
    dataio.save_dataset(ds, out)
    print(f"generated {len(ds)} rows x {ds.grid_size} beams ({ds.m} APs x {ds.n} beams) -> {out}")
    return 0


def _train_rf(cfg, masked_train, out: Path) -> None:
    hyper = _forest_hyper(cfg.models["rf"])
    seed = cfg.models["rf"].get("seed", _derive_seed(cfg.seeds["model"], 1))
    imputer = RandomForestImputer(hyper=hyper, seed=seed).fit(dataio.masked_matrix(masked_train))
    np.savez(out / "rf.npz", **imputer.state_dict())
    print(f"rf: {len(imputer.forests_)} column forests -> {out / 'rf.npz'}")


def _train_mean(cfg, masked_train, out: Path) -> None:
    _, col_means, _ = column_mean_fill(dataio.masked_matrix(masked_train))
    np.savez(out / "mean.npz", column_means=col_means)
    print(f"mean: column means -> {out / 'mean.npz'}")


def _train_mf(cfg, masked_train, out: Path) -> None:
    block = dict(cfg.models["mf"])
    manifest = {
        "hyper": {
            "n_trees": block.get("n_trees", 100),
            "mtry": block.get("mtry"),
            "min_leaf": block.get("min_leaf", 5),
            "max_depth": block.get("max_depth"),
        },
        "max_iter": block.get("max_iter", 10),
        "seed": block.get("seed", _derive_seed(cfg.seeds["model"], 2)),
    }
    with open(out / "mf_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mf: manifest -> {out / 'mf_manifest.json'}")


def _gan_config(cfg, grid_size: int) -> GanConfig:
    block = dict(cfg.models["cgan"])
    block.setdefault("seed", _derive_seed(cfg.seeds["model"], 3))
    block["gen_out"] = grid_size
    known = {f.name for f in dataclasses.fields(GanConfig)}
    bad = set(block) - known
    if bad:
        raise ConfigurationError(f"unknown cgan options: {sorted(bad)}")
    for key in ("gen_hidden", "disc_hidden"):
        if key in block:
            block[key] = tuple(block[key])
    return GanConfig(**block)


def _train_cgan(cfg, masked_train, out: Path) -> None:
    gan_cfg = _gan_config(cfg, masked_train.grid_size)
    normalizer = Normalizer.fit(dataio.masked_matrix(masked_train))
    gen, pre_curve = pretrain_generator(masked_train, gan_cfg, normalizer)
    gen, disc, curves = train_gan(masked_train, gen, gan_cfg, normalizer)
    state = {}
    state.update(net_state(gen, "gen_"))
    state.update(net_state(disc, "disc_"))
    state["norm_mean"] = normalizer.mean
    state["norm_std"] = normalizer.std
    np.savez(out / "cgan.npz", **state)
    with open(out / "cgan_manifest.json", "w") as fh:
        json.dump(dataclasses.asdict(gan_cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "cgan_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "gen_loss", "disc_loss", "pretrain_loss"])
        for i, loss in enumerate(pre_curve):
            w.writerow([i + 1, "", "", repr(float(loss))])
        for i, (g, d) in enumerate(zip(curves["gen_loss"], curves["disc_loss"])):
            w.writerow([len(pre_curve) + i + 1, repr(float(g)), repr(float(d)), ""])
    print(f"cgan: {len(pre_curve)} pretrain + {len(curves['gen_loss'])} adversarial epochs -> {out / 'cgan.npz'}")


def cmd_train(cfg: ExperimentConfig, model: str) -> int:
    if model not in cfg.models:
        raise ConfigurationError(
            f"model {model!r} is not in this experiment; configured: {sorted(cfg.models)}"
        )
    if model == "random":
        print("random baseline needs no training")
        return 0
    ds = _load_dataset(cfg)
    _, _, masked_train = _split_and_mask_train(cfg, ds)
    out = _models_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    trainers = {"rf": _train_rf, "mean": _train_mean, "mf": _train_mf, "cgan": _train_cgan}
    trainers[model](cfg, masked_train, out)
    return 0


def _load_trained(cfg, ds, masked_train) -> TrainedModels:
    mdir = _models_dir(cfg)
    config_echo = ds.meta.get("config", {})
    clamp = None
    if config_echo:
        clamp = (
            config_echo["noise_floor_dbm"] - 20.0,
            config_echo["tx_power_dbm"] + 20.0,
        )
    trained = TrainedModels(m=ds.m, n=ds.n, train_p=cfg.masking.train_p, cgan_clamp=clamp)
    for model in cfg.models:
        if model == "random":
            continue
        if model == "rf":
            path = mdir / "rf.npz"
            if not path.exists():
                raise StateError(f"missing checkpoint for model rf: {path}")
            with np.load(path) as data:
                trained.rf = RandomForestImputer.from_state({k: data[k] for k in data.files})
        elif model == "mean":
            path = mdir / "mean.npz"
            if not path.exists():
                raise StateError(f"missing checkpoint for model mean: {path}")
            with np.load(path) as data:
                trained.column_means = np.asarray(data["column_means"], dtype=float)
        elif model == "mf":
            path = mdir / "mf_manifest.json"
            if not path.exists():
                raise StateError(f"missing manifest for model mf: {path}")
            with open(path) as fh:
                manifest = json.load(fh)
            trained.mf_hyper = ForestHyper(**manifest["hyper"])
            trained.mf_max_iter = int(manifest["max_iter"])
            trained.mf_seed = int(manifest["seed"])
            trained.train_masked = dataio.masked_matrix(masked_train)
        elif model == "cgan":
            path = mdir / "cgan.npz"
            if not path.exists():
                raise StateError(f"missing checkpoint for model cgan: {path}")
            with np.load(path) as data:
                state = {k: data[k] for k in data.files}
            trained.cgan_gen = net_from_state(state, "gen_")
            trained.cgan_normalizer = Normalizer(
                mean=np.asarray(state["norm_mean"], dtype=float),
                std=np.asarray(state["norm_std"], dtype=float),
            )
    return trained


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    ds = _load_dataset(cfg)
    _, test, masked_train = _split_and_mask_train(cfg, ds)
    trained = _load_trained(cfg, ds, masked_train)
    models = sorted(cfg.models)
    outcomes = run_sweep(
        test,
        models=models,
        ps=list(cfg.masking.test_ps),
        ks=list(cfg.ks),
        trained=trained,
        seeds={"eval": cfg.seeds["eval"]},
        oversample_factor=cfg.masking.oversample_factor,
    )
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    outcomes_to_csv(outcomes, out_root / "outcomes.csv")
    build_report(outcomes, list(cfg.ks), list(cfg.masking.test_ps), models, out_root / "report")
    print(
        f"evaluated {len(outcomes)} outcomes over models={models} "
        f"ps={list(cfg.masking.test_ps)} ks={list(cfg.ks)} -> {out_root / 'report'}"
    )
    return 0


def cmd_report(cfg: ExperimentConfig) -> int:
    out_root = Path(cfg.output_dir)
    path = out_root / "outcomes.csv"
    if not path.exists():
        raise StateError(f"no outcome table at {path}; run the evaluate command first")
    ds_meta_path = _dataset_dir(cfg) / "meta.json"
    if not ds_meta_path.exists():
        raise StateError(f"no dataset metadata at {ds_meta_path}")
    with open(ds_meta_path) as fh:
        n = int(json.load(fh)["n"])
    outcomes = outcomes_from_csv(path, beams_per_ap=n)
    models = sorted(cfg.models)
    build_report(outcomes, list(cfg.ks), list(cfg.masking.test_ps), models, out_root / "report")
    print(f"re-rendered report from {path}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamfill",
        description="Beam-measurement imputation and directed beam search experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("generate", "generate the synthetic measurement dataset"),
        ("train", "train one model and write its checkpoint"),
        ("evaluate", "run the factorial sweep and write outcome + report files"),
        ("report", "re-render report files from an existing outcome table"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, help="JSON experiment config (defaults built in)")
        p.add_argument("--out", default=None, help="override output_dir")
        p.add_argument("--seed", type=int, default=None, help="override the data seed")
        if name == "train":
            p.add_argument("--model", required=True, help="one of: " + ", ".join(sorted(DEFAULT_MODEL_BLOCKS)))
    return parser


def main(argv=None) -> int:
    max_threads = os.environ.get("BEAMFILL_MAX_THREADS")
    if max_threads:
        try:
            import numba

            numba.set_num_threads(max(1, int(max_threads)))
        except (ImportError, ValueError):
            pass
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_experiment_config(args.config)
        if args.out is not None:
            cfg.output_dir = args.out
        if args.seed is not None:
            cfg.seeds = {**cfg.seeds, "data": args.seed}
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.model)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_report(cfg)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
