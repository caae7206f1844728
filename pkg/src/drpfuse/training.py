"""Deterministic training loop with per-fold checkpoint selection.

Each fold: carve a stratified 10% of the training cell lines as validation
(cell-line level, preserving cold-start semantics inside model selection),
fit feature scalers on the remaining training cells only, train with Adam,
track the checkpoint with the lowest validation RMSE, and report test-fold
metrics from that checkpoint.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .layers import GraphBatch, ParamStore, decayable
from .losses import total_loss
from .metrics import MetricReport, compute_report, rmse
from .network import DrugResponseModel, ModelConfig
from .omics import ConfigError, OmicsTable, PairSample, asw_integrate, MinMaxScaler

__all__ = ["NumericError", "TrainProtocol", "TrainState", "Adam", "FoldFeatures",
           "train_fold", "cross_validate", "predict", "carve_validation"]


class NumericError(ArithmeticError):
    """A non-finite value appeared where the contract requires finiteness."""


@dataclass
class TrainProtocol:
    """Optimization protocol; defaults follow the reference training recipe."""

    epochs: int = 60
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 3e-4
    val_fraction: float = 0.10
    threshold: float = 0.5
    k_folds: int = 5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class TrainState:
    """Progress record; best validation RMSE is non-increasing over history."""

    step: int = 0
    epoch: int = 0
    best_val_rmse: float = math.inf
    best_step: int = -1
    best_params: Optional[dict] = None
    history: list = field(default_factory=list)   # rows: (step, epoch, train_loss, val_rmse)


class Adam:
    """Adam with decoupled weight decay on decayable parameters only."""

    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            if p.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and decayable(name):
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def carve_validation(cells: Sequence[str], types: dict, fraction: float,
                     seed: int) -> tuple[list, list]:
    """Split training cells into (train, validation), stratified by type.

    Per cancer type, floor(fraction * n) cells go to validation; if that
    leaves validation empty but at least two cells exist overall, one cell
    of the largest type is moved over.
    """
    rng = np.random.default_rng(seed)
    by_type: dict[str, list] = {}
    for c in cells:
        by_type.setdefault(types[c], []).append(c)
    train: list = []
    val: list = []
    for t in sorted(by_type):
        ids = sorted(by_type[t])
        rng.shuffle(ids)
        n_val = int(fraction * len(ids))
        val.extend(ids[:n_val])
        train.extend(ids[n_val:])
    if not val and len(train) >= 2:
        largest = max(sorted(by_type), key=lambda t: len(by_type[t]))
        mover = next(c for c in train if types[c] == largest)
        train.remove(mover)
        val.append(mover)
    return train, val


class FoldFeatures:
    """Leakage-safe per-fold feature matrices over an omics table.

    Continuous modalities (GE, ASW-integrated PROT, METH) are min-max
    scaled with statistics from the fitting cells only; PROT missingness is
    mean-imputed per column from the same cells. MUT and CNV pass through
    as coded. ``prot_complete_only`` restricts PROT to columns observed in
    every cell line of the table.
    """

    def __init__(self, table: OmicsTable, modalities: Sequence[str],
                 fit_cells: Sequence[str], prot_complete_only: bool = False):
        self.table = table
        self.modalities = list(modalities)
        fit_rows = [table.row_index(c) for c in fit_cells]
        self.matrices: dict[str, np.ndarray] = {}
        self.feature_names: dict[str, list] = {}
        for m in self.modalities:
            if m == "prot":
                mat = asw_integrate(table.matrices["prot"], table.matrices["dprot"])
                names = table.feature_names["prot"]
                if prot_complete_only:
                    complete = ~np.isnan(table.matrices["prot"]).any(axis=0)
                    mat = mat[:, complete]
                    names = [n for n, k in zip(names, complete) if k]
                fit = mat[fit_rows]
                means = np.nanmean(np.where(np.isnan(fit), np.nan, fit), axis=0)
                means = np.where(np.isnan(means), 0.0, means)
                mat = np.where(np.isnan(mat), means, mat)
                scaler = MinMaxScaler().fit(mat[fit_rows])
                self.matrices[m] = scaler.transform(mat)
                self.feature_names[m] = names
            elif m in ("ge", "meth"):
                mat = table.matrices[m]
                scaler = MinMaxScaler().fit(mat[fit_rows])
                self.matrices[m] = scaler.transform(mat)
                self.feature_names[m] = table.feature_names[m]
            elif m in ("mut", "cnv"):
                self.matrices[m] = table.matrices[m]
                self.feature_names[m] = table.feature_names[m]
            else:
                raise ConfigError(f"unknown modality {m!r}")

    @property
    def dims(self) -> dict:
        return {m: int(self.matrices[m].shape[1]) for m in self.modalities}

    def slabs(self, cell_ids: Sequence[str]) -> dict:
        rows = [self.table.row_index(c) for c in cell_ids]
        return {m: self.matrices[m][rows] for m in self.modalities}


def predict(model: DrugResponseModel, features: FoldFeatures, pairs: Sequence[PairSample],
            drug_graphs: dict, chunk: int = 256):
    """Eval-mode predictions; returns (y_hat, p_hat) arrays over the pairs."""
    y_parts, p_parts = [], []
    for lo in range(0, len(pairs), chunk):
        part = pairs[lo:lo + chunk]
        slabs = features.slabs([p.cell_id for p in part])
        batch = GraphBatch([drug_graphs[p.drug_id] for p in part])
        out = model.forward(slabs, batch, training=False)
        y_parts.append(out.y_hat.data)
        p_parts.append(out.p_hat.data)
    return np.concatenate(y_parts), np.concatenate(p_parts)


def _audit_disjoint(train_cells, val_cells, test_cells) -> None:
    train, val, test = set(train_cells), set(val_cells), set(test_cells)
    if train & test or val & test or train & val:
        raise ConfigError("cell-line leakage across train/validation/test")


def train_fold(dataset, fold: int, model_config: ModelConfig,
               protocol: TrainProtocol, seed: int = 0,
               modalities: Sequence[str] = ("ge", "mut", "cnv", "prot", "meth"),
               prot_complete_only: bool = False,
               log_rows: Optional[list] = None):
    """Train one fold; returns (TrainState, MetricReport, FoldFeatures, model).

    The test fold is never touched before the final evaluation; scalers are
    fit on the post-carve training cells.
    """
    folds = dataset.folds
    table = dataset.table
    train_all = folds.train_cells(fold)
    test_cells = folds.test_cells(fold)
    types = {c: table.cancer_type(c) for c in table.cell_ids}
    train_cells, val_cells = carve_validation(train_all, types,
                                              protocol.val_fraction, seed)
    _audit_disjoint(train_cells, val_cells, test_cells)

    features = FoldFeatures(table, modalities, train_cells, prot_complete_only)
    train_set = set(train_cells)
    val_set = set(val_cells)
    train_pairs = [p for p in dataset.pairs if p.fold != fold and p.cell_id in train_set]
    val_pairs = [p for p in dataset.pairs if p.fold != fold and p.cell_id in val_set]
    test_pairs = [p for p in dataset.pairs if p.fold == fold]
    if not train_pairs:
        raise ConfigError(f"fold {fold}: empty training set")
    if not test_pairs:
        raise ConfigError(f"fold {fold}: empty test set")
    if not val_pairs:
        val_pairs = train_pairs  # degenerate small data: select on train loss

    model = DrugResponseModel(model_config, features.dims, seed=seed)
    optimizer = Adam(model.store, lr=protocol.learning_rate,
                     weight_decay=protocol.weight_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, fold, 1]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, fold, 2]))
    state = TrainState()

    y_train = np.array([p.log_ic50 for p in train_pairs])
    t_train = np.array([p.label for p in train_pairs])
    for epoch in range(protocol.epochs):
        order = shuffle_rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), protocol.batch_size):
            sel = order[lo:lo + protocol.batch_size]
            part = [train_pairs[i] for i in sel]
            slabs = features.slabs([p.cell_id for p in part])
            batch = GraphBatch([dataset.drugs[p.drug_id] for p in part])
            out = model.forward(slabs, batch, rng=dropout_rng, training=True)
            loss = total_loss(out.y_hat, y_train[sel], out.p_hat, t_train[sel],
                              model.store, model_config.alpha, model_config.beta,
                              model_config.l2_lambda, model_config.focal_gamma)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at step {state.step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            state.step += 1
            epoch_loss += loss.item()
            n_batches += 1
        state.epoch = epoch + 1

        y_val, p_val = predict(model, features, val_pairs, dataset.drugs)
        if not (np.isfinite(y_val).all() and np.isfinite(p_val).all()):
            raise NumericError(f"non-finite validation predictions at epoch {epoch}")
        val_rmse = rmse(y_val, [p.log_ic50 for p in val_pairs])
        if val_rmse < state.best_val_rmse:
            state.best_val_rmse = val_rmse
            state.best_step = state.step
            state.best_params = model.store.state_dict()
        row = (state.step, state.epoch, epoch_loss / max(1, n_batches), val_rmse)
        state.history.append(row)
        if log_rows is not None:
            log_rows.append(row)

    model.store.load_state_dict(state.best_params)
    y_test, p_test = predict(model, features, test_pairs, dataset.drugs)
    report = compute_report(y_test, [p.log_ic50 for p in test_pairs],
                            p_test, [p.label for p in test_pairs],
                            threshold=protocol.threshold)
    return state, report, features, model


def cross_validate(dataset, model_config: ModelConfig, protocol: TrainProtocol,
                   seed: int = 0, modalities=("ge", "mut", "cnv", "prot", "meth"),
                   prot_complete_only: bool = False, workers: int = 1) -> dict:
    """Run every fold and aggregate the metric suite (mean and sd).

    A leakage audit runs for every fold before any training starts.
    """
    fold_ids = sorted(dataset.folds.folds)
    for f in fold_ids:
        train = set(dataset.folds.train_cells(f))
        test = set(dataset.folds.test_cells(f))
        if train & test:
            raise ConfigError(f"fold {f}: train/test cell overlap")

    args = [(dataset, f, model_config, protocol, seed, tuple(modalities),
             prot_complete_only) for f in fold_ids]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_fold_worker, args))
    else:
        outcomes = [_fold_worker(a) for a in args]

    per_fold = {f: rep.to_dict() for f, (rep, _) in zip(fold_ids, outcomes)}
    names = MetricReport.__dataclass_fields__.keys()
    mean = {k: float(np.mean([per_fold[f][k] for f in fold_ids])) for k in names}
    sd = {k: float(np.std([per_fold[f][k] for f in fold_ids])) for k in names}
    return {
        "folds": per_fold,
        "mean": mean,
        "sd": sd,
        "best_val_rmse": {f: s for f, (_, s) in zip(fold_ids, outcomes)},
    }


def _fold_worker(args):
    (dataset, fold, model_config, protocol, seed, modalities,
     prot_complete_only) = args
    state, report, _, _ = train_fold(dataset, fold, model_config, protocol,
                                     seed=seed, modalities=modalities,
                                     prot_complete_only=prot_complete_only)
    return report, state.best_val_rmse
