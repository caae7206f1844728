"""Command-line pipeline: prepare, split, train, eval, explain, parse-smiles.

Every command writes its fully resolved configuration and the SHA-256 of
each input file beside its outputs, emits no timestamps, and is
deterministic for a fixed seed, so reruns with identical inputs are
byte-identical. Exit codes: 0 ok, 2 usage/configuration, 3 data,
4 numeric (non-finite values), 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .explain import ExplainConfig, explain_report
from .gsea import read_gmt
from .metrics import UndefinedMetricError, compute_report
from .network import DrugResponseModel, ModelConfig, load_checkpoint, save_checkpoint
from .omics import ConfigError, DataError, DimensionError
from .pipeline import DatasetBundle, prepare, sha256_file, split
from .smiles import SmilesParseError, parse_smiles
from .training import (NumericError, TrainProtocol, cross_validate, predict,
                       train_fold, FoldFeatures)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


@dataclass
class RunConfig:
    """Flat, fully declarative run description (file keys = field names)."""

    modalities: str = "ge,mut,cnv,prot,meth"
    prot_complete_only: bool = False
    k_folds: int = 5
    seed: int = 0
    fold: int = -1                   # train/eval/explain target; -1 = all (train)
    epochs: int = 60
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 3e-4
    val_fraction: float = 0.10
    threshold: float = 0.5
    workers: int = 1
    # architecture
    token_dim: int = 32
    conv_kernel_sizes: str = "3,7,15"
    conv_channels: int = 8
    tokens_per_modality: int = 8
    omics_heads: int = 4
    omics_depth: int = 2
    drug_heads: int = 4
    drug_depth: int = 2
    fusion_heads: int = 4
    fusion_depth: int = 2
    gnn_depth: int = 2
    pooling: str = "attention"
    head_hidden: int = 32
    ffn_mult: int = 2
    activation: str = "gelu"
    dropout: float = 0.1
    alpha: float = 1.0
    beta: float = 1.0
    l2_lambda: float = 0.0
    focal_gamma: float = 2.0
    learned_positions: bool = False
    # explanation
    background_size: int = 32
    shap_permutations: int = 200
    gsea_permutations: int = 1000
    weight_exponent: float = 1.0
    min_set_size: int = 5
    top_m: int = 20
    explain_target: str = "cls"
    estimator: str = "auto"
    cells_per_type: int = 2
    drugs_per_explain: int = 2

    def modality_list(self) -> list:
        mods = [m.strip() for m in self.modalities.split(",") if m.strip()]
        if not mods:
            raise ConfigError("no modalities enabled")
        return mods

    def model_config(self) -> ModelConfig:
        kernels = tuple(int(k) for k in self.conv_kernel_sizes.split(",") if k.strip())
        return ModelConfig(
            token_dim=self.token_dim, conv_kernel_sizes=kernels,
            conv_channels=self.conv_channels,
            tokens_per_modality=self.tokens_per_modality,
            omics_heads=self.omics_heads, omics_depth=self.omics_depth,
            drug_heads=self.drug_heads, drug_depth=self.drug_depth,
            fusion_heads=self.fusion_heads, fusion_depth=self.fusion_depth,
            gnn_depth=self.gnn_depth, pooling=self.pooling,
            head_hidden=self.head_hidden, ffn_mult=self.ffn_mult,
            activation=self.activation, dropout=self.dropout,
            alpha=self.alpha, beta=self.beta, l2_lambda=self.l2_lambda,
            focal_gamma=self.focal_gamma,
            learned_positions=self.learned_positions)

    def protocol(self) -> TrainProtocol:
        return TrainProtocol(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate,
                             weight_decay=self.weight_decay,
                             val_fraction=self.val_fraction,
                             threshold=self.threshold, k_folds=self.k_folds)

    def explain_config(self) -> ExplainConfig:
        return ExplainConfig(background_size=self.background_size,
                             n_permutations=self.shap_permutations,
                             gsea_permutations=self.gsea_permutations,
                             weight_exponent=self.weight_exponent,
                             min_set_size=self.min_set_size, top_m=self.top_m,
                             seed=self.seed, target=self.explain_target,
                             estimator=self.estimator)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key}: {raw!r} is not a boolean")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc
    return raw


def load_run_config(config_path, overrides) -> RunConfig:
    """defaults < config file < command-line overrides; unknown keys rejected."""
    values: dict = {}
    if config_path:
        with open(config_path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{config_path}:{lineno}: expected key=value")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"{config_path}:{lineno}: unknown config key {key!r}")
                values[key] = _coerce(key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit_run_metadata(out_dir: Path, config: RunConfig, inputs: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "resolved_config.json", dataclasses.asdict(config))
    _write_json(out_dir / "inputs.json",
                {str(k): sha256_file(v) for k, v in inputs.items()})


def _config_hash(config: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# -- commands --------------------------------------------------------------------


def cmd_prepare(args, config: RunConfig) -> int:
    out = Path(args.out)
    bundle = prepare(args.manifest)
    out.mkdir(parents=True, exist_ok=True)
    bundle.save(out / "dataset.pkl")
    _write_json(out / "stats.json", bundle.stats)
    _write_json(out / "exclusions.json", bundle.exclusions)
    _emit_run_metadata(out, config, {"manifest": args.manifest})
    print(json.dumps(bundle.stats, sort_keys=True))
    return EXIT_OK


def cmd_split(args, config: RunConfig) -> int:
    out = Path(args.out)
    bundle = DatasetBundle.load(args.dataset)
    bundle = split(bundle, k=config.k_folds, seed=config.seed)
    out.mkdir(parents=True, exist_ok=True)
    bundle.save(out / "dataset.pkl")
    _write_json(out / "folds.json", bundle.folds.to_json_dict())
    _write_json(out / "stats.json", bundle.stats)
    _emit_run_metadata(out, config, {"dataset": args.dataset})
    print(json.dumps({"k": config.k_folds, "pairs": bundle.stats["pairs"]},
                     sort_keys=True))
    return EXIT_OK


def _require_split(bundle: DatasetBundle, source) -> None:
    if bundle.folds is None or bundle.pairs is None:
        raise ConfigError(f"{source} has no fold assignment; run the split command first")


def cmd_train(args, config: RunConfig) -> int:
    out = Path(args.out)
    bundle = DatasetBundle.load(args.dataset)
    _require_split(bundle, args.dataset)
    model_cfg = config.model_config()
    protocol = config.protocol()
    mods = config.modality_list()
    out.mkdir(parents=True, exist_ok=True)

    fold_ids = (sorted(bundle.folds.folds) if config.fold < 0 else [config.fold])
    per_fold = {}
    best_val = {}
    for f in fold_ids:
        log_rows: list = []
        state, report, _, model = train_fold(
            bundle, f, model_cfg, protocol, seed=config.seed,
            modalities=mods, prot_complete_only=config.prot_complete_only,
            log_rows=log_rows)
        per_fold[str(f)] = report.to_dict()
        best_val[str(f)] = state.best_val_rmse
        save_checkpoint(out / f"fold{f}.ckpt", model, step=state.best_step)
        with open(out / f"train_log_fold{f}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "epoch", "train_loss", "val_rmse"])
            for row in log_rows:
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])

    names = list(next(iter(per_fold.values())))
    results = {
        "folds": per_fold,
        "mean": {k: float(np.mean([per_fold[f][k] for f in per_fold])) for k in names},
        "sd": {k: float(np.std([per_fold[f][k] for f in per_fold])) for k in names},
        "best_val_rmse": best_val,
        "seed": config.seed,
        "config_hash": _config_hash(config),
        "data_hashes": {"dataset": sha256_file(args.dataset)},
    }
    _write_json(out / "results.json", results)
    _emit_run_metadata(out, config, {"dataset": args.dataset})
    print(json.dumps(results["mean"], sort_keys=True))
    return EXIT_OK


def _rebuild_features(bundle, config: RunConfig, fold: int) -> FoldFeatures:
    from .training import carve_validation
    table = bundle.table
    types = {c: table.cancer_type(c) for c in table.cell_ids}
    train_cells, _ = carve_validation(bundle.folds.train_cells(fold), types,
                                      config.val_fraction, config.seed)
    return FoldFeatures(table, config.modality_list(), train_cells,
                        config.prot_complete_only)


def cmd_eval(args, config: RunConfig) -> int:
    out = Path(args.out)
    bundle = DatasetBundle.load(args.dataset)
    _require_split(bundle, args.dataset)
    fold = config.fold if config.fold >= 0 else 0
    model, step = load_checkpoint(args.checkpoint)
    features = _rebuild_features(bundle, config, fold)
    if features.dims != model.modality_dims:
        raise DataError(f"checkpoint modality dims {model.modality_dims} do not match "
                        f"dataset features {features.dims}")
    test_pairs = [p for p in bundle.pairs if p.fold == fold]
    if not test_pairs:
        raise ConfigError(f"fold {fold} has no test pairs")
    y_hat, p_hat = predict(model, features, test_pairs, bundle.drugs)
    if not (np.isfinite(y_hat).all() and np.isfinite(p_hat).all()):
        raise NumericError("non-finite predictions")
    report = compute_report(y_hat, [p.log_ic50 for p in test_pairs],
                            p_hat, [p.label for p in test_pairs],
                            threshold=config.threshold)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"fold": fold, "step": step, "n_pairs": len(test_pairs),
               **report.to_dict()}
    _write_json(out / "metrics.json", payload)
    _emit_run_metadata(out, config, {"dataset": args.dataset,
                                     "checkpoint": args.checkpoint})
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_explain(args, config: RunConfig) -> int:
    out = Path(args.out)
    bundle = DatasetBundle.load(args.dataset)
    _require_split(bundle, args.dataset)
    fold = config.fold if config.fold >= 0 else 0
    model, _ = load_checkpoint(args.checkpoint)
    features = _rebuild_features(bundle, config, fold)
    gene_sets = read_gmt(args.gene_sets)

    # cancer x drug slice over the held-out fold
    test_pairs = [p for p in bundle.pairs if p.fold == fold]
    by_type: dict = {}
    for p in test_pairs:
        by_type.setdefault(bundle.table.cancer_type(p.cell_id), set()).add(p.cell_id)
    drug_ids = sorted({p.drug_id for p in test_pairs})[:config.drugs_per_explain]
    samples = []
    for t in sorted(by_type):
        for cell in sorted(by_type[t])[:config.cells_per_type]:
            for d in drug_ids:
                samples.append((cell, d))
    if not samples:
        raise ConfigError(f"fold {fold} offers no (cell, drug) samples to explain")

    report = explain_report(model, features, samples, bundle.drugs, gene_sets,
                            config.explain_config(), out_dir=out)
    _emit_run_metadata(out, config, {"dataset": args.dataset,
                                     "checkpoint": args.checkpoint,
                                     "gene_sets": args.gene_sets})
    print(json.dumps({"n_samples": report["n_samples"],
                      "n_gene_sets": len(report["enriched_sensitivity"])
                      + len(report["enriched_resistance"]),
                      "skipped": len(report["skipped_gene_sets"])}, sort_keys=True))
    return EXIT_OK


def cmd_parse_smiles(args, config: RunConfig) -> int:
    graph = parse_smiles(args.smiles, drug_id=args.smiles)
    payload = graph.to_json_dict()
    text = json.dumps(payload, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "graph.json", payload)
    print(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drpfuse",
        description="dual-branch transformer-fusion drug response pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--workers", type=int, help="fold-level parallelism")
    common.add_argument("--out", default="out", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("prepare", parents=[common], help="ingest a data manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("split", parents=[common], help="assign cold-start folds")
    p.add_argument("--dataset", required=True, help="dataset.pkl from prepare")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train folds and report metrics")
    p.add_argument("--dataset", required=True, help="dataset.pkl from split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common],
                       help="attribution + enrichment report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gene-sets", required=True, help="GMT file")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("parse-smiles", parents=[common],
                       help="parse one SMILES to a JSON graph")
    p.add_argument("smiles")
    p.set_defaults(func=cmd_parse_smiles)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.set or [])
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        config = load_run_config(args.config, overrides)
        return args.func(args, config)
    except (ConfigError,) as exc:
        print(f"error (usage): {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, SmilesParseError, UndefinedMetricError,
            ValueError) as exc:
        print(f"error (data): {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error (numeric): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
