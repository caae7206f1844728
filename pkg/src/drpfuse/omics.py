"""Multi-omics ingestion, preprocessing, cold-start folds, and pair assembly.

Cell-line profiles arrive as per-modality CSV matrices (rows = cell lines,
first column ``cell_id``). Preprocessing follows fixed rules: proteomics is
integrated by additive shift (abundance + healthy-reference difference),
methylation clusters are kept only when total read depth per CpG is at
least 10 in every cell line, responses are binarized at log(IC50) < -2.0,
and scaling is min-max fit on the training cells of each fold only.
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "DataError",
    "ConfigError",
    "DimensionError",
    "OmicsProfile",
    "OmicsTable",
    "PairSample",
    "FoldSplit",
    "MinMaxScaler",
    "asw_integrate",
    "coverage_mask",
    "filter_methylation",
    "binarize_response",
    "scale_features",
    "make_folds",
    "assemble_pairs",
    "apply_type_retention",
    "SENSITIVITY_THRESHOLD",
    "MIN_LINES_PER_TYPE",
    "MIN_COVERAGE",
]

SENSITIVITY_THRESHOLD = -2.0   # label 1 iff log(IC50) strictly below
MIN_LINES_PER_TYPE = 10        # cancer types with fewer cell lines are dropped
MIN_COVERAGE = 10.0            # methylation depth-per-CpG cutoff, inclusive

MODALITIES = ("ge", "mut", "cnv", "prot", "dprot", "meth")


class DataError(ValueError):
    """Input data violates a documented contract."""


class ConfigError(ValueError):
    """A run configuration is unusable (e.g. more folds than cell lines)."""


class DimensionError(ValueError):
    """Vector or matrix dimensions disagree."""


# -- profiles ---------------------------------------------------------------------


@dataclass
class OmicsProfile:
    """Per-cell-line modality vectors with validation of coded ranges."""

    cell_id: str
    cancer_type: str
    ge: np.ndarray
    mut: np.ndarray
    cnv: np.ndarray
    prot: np.ndarray       # may contain NaN (missing measurements)
    dprot: np.ndarray      # abundance minus healthy reference, same length
    meth: np.ndarray

    @property
    def dims(self) -> dict:
        return {m: int(getattr(self, m).shape[0]) for m in MODALITIES}


class OmicsTable:
    """Column-aligned omics matrices over a fixed roster of cell lines."""

    def __init__(self, cell_ids: Sequence[str], cancer_types: Sequence[str],
                 matrices: Mapping[str, np.ndarray],
                 feature_names: Mapping[str, list]):
        self.cell_ids = list(cell_ids)
        self.cancer_types = list(cancer_types)
        self.matrices = {m: np.asarray(matrices[m], dtype=np.float64) for m in matrices}
        self.feature_names = {m: list(feature_names[m]) for m in feature_names}
        self._row = {c: i for i, c in enumerate(self.cell_ids)}
        self._validate()

    def _validate(self) -> None:
        n = len(self.cell_ids)
        if len(set(self.cell_ids)) != n:
            raise DataError("duplicate cell ids in omics table")
        for m, mat in self.matrices.items():
            if mat.shape[0] != n:
                raise DimensionError(f"modality {m}: {mat.shape[0]} rows for {n} cells")
        ge, mut, cnv, meth = (self.matrices[k] for k in ("ge", "mut", "cnv", "meth"))
        if ge.size and (np.nanmin(ge) < 0.0 or np.nanmax(ge) > 1.0):
            raise DataError("GE values must lie in [0, 1]")
        if mut.size and not np.isin(mut, (0.0, 1.0)).all():
            raise DataError("MUT values must be 0/1")
        if cnv.size and not np.isin(cnv, (-1.0, 0.0, 1.0)).all():
            raise DataError("CNV values must be -1/0/+1")
        if meth.size and (np.nanmin(meth) < 0.0 or np.nanmax(meth) > 1.0):
            raise DataError("METH values must lie in [0, 1]")
        if self.matrices["prot"].shape[1] != self.matrices["dprot"].shape[1]:
            raise DimensionError(
                f"PROT dimension {self.matrices['prot'].shape[1]} != "
                f"dPROT dimension {self.matrices['dprot'].shape[1]}")

    def __len__(self) -> int:
        return len(self.cell_ids)

    def row_index(self, cell_id: str) -> int:
        return self._row[cell_id]

    def cancer_type(self, cell_id: str) -> str:
        return self.cancer_types[self._row[cell_id]]

    def profile(self, cell_id: str) -> OmicsProfile:
        i = self._row[cell_id]
        return OmicsProfile(cell_id=cell_id, cancer_type=self.cancer_types[i],
                            **{m: self.matrices[m][i] for m in MODALITIES})

    def subset(self, cell_ids: Sequence[str]) -> "OmicsTable":
        rows = [self._row[c] for c in cell_ids]
        return OmicsTable(
            [self.cell_ids[r] for r in rows],
            [self.cancer_types[r] for r in rows],
            {m: mat[rows] for m, mat in self.matrices.items()},
            self.feature_names,
        )


# -- preprocessing operations ---------------------------------------------------------


def asw_integrate(prot: np.ndarray, dprot: np.ndarray) -> np.ndarray:
    """Additive-shift integration: elementwise abundance + reference shift.

    Missing (NaN) abundance entries stay missing in the result.
    """
    prot = np.asarray(prot, dtype=np.float64)
    dprot = np.asarray(dprot, dtype=np.float64)
    if prot.shape != dprot.shape:
        raise DimensionError(f"ASW length mismatch: {prot.shape} vs {dprot.shape}")
    return prot + dprot


def coverage_mask(total_depth: np.ndarray, n_cpg: np.ndarray,
                  min_coverage: float = MIN_COVERAGE) -> np.ndarray:
    """Boolean keep-mask for methylation clusters: depth / CpGs >= cutoff."""
    depth = np.asarray(total_depth, dtype=np.float64)
    cpg = np.asarray(n_cpg, dtype=np.float64)
    if depth.shape != cpg.shape:
        raise DimensionError(f"coverage arrays disagree: {depth.shape} vs {cpg.shape}")
    zero = np.flatnonzero(cpg == 0)
    if zero.size:
        raise DataError(f"methylation cluster {zero[0]} has zero CpGs")
    return depth / cpg >= min_coverage


def filter_methylation(clusters: Iterable[tuple],
                       min_coverage: float = MIN_COVERAGE) -> np.ndarray:
    """Keep cluster values whose coverage (depth / CpGs) is >= the cutoff.

    ``clusters`` is an iterable of (value, total_depth, n_cpg); order is
    preserved. The cutoff is inclusive.
    """
    rows = list(clusters)
    if not rows:
        return np.zeros(0)
    values = np.array([r[0] for r in rows], dtype=np.float64)
    keep = coverage_mask(np.array([r[1] for r in rows]),
                         np.array([r[2] for r in rows]), min_coverage)
    return values[keep]


def binarize_response(log_ic50: float) -> int:
    """1 (sensitive) iff log(IC50) is strictly below -2.0, else 0."""
    v = float(log_ic50)
    if not np.isfinite(v):
        raise DataError(f"log_ic50 is not finite: {log_ic50!r}")
    return int(v < SENSITIVITY_THRESHOLD)


class MinMaxScaler:
    """Per-column min-max to [0, 1], fit on training rows only.

    Constant columns map to 0; transformed test values are not clipped, so
    they may leave [0, 1].
    """

    def __init__(self):
        self.min_: Optional[np.ndarray] = None
        self.range_: Optional[np.ndarray] = None

    def fit(self, matrix: np.ndarray) -> "MinMaxScaler":
        m = np.asarray(matrix, dtype=np.float64)
        self.min_ = np.nanmin(m, axis=0) if m.size else np.zeros(m.shape[1])
        peak = np.nanmax(m, axis=0) if m.size else np.zeros(m.shape[1])
        self.range_ = peak - self.min_
        return self

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        if self.min_ is None:
            raise ConfigError("scaler used before fit")
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape[1] != self.min_.shape[0]:
            raise DimensionError(f"scaler fitted on {self.min_.shape[0]} columns, got {m.shape[1]}")
        out = np.zeros_like(m)
        live = self.range_ != 0.0
        out[:, live] = (m[:, live] - self.min_[live]) / self.range_[live]
        return out


def scale_features(train: np.ndarray, test: np.ndarray):
    """Fit min-max on ``train``, apply to both; returns (train', test', scaler)."""
    scaler = MinMaxScaler().fit(train)
    return scaler.transform(train), scaler.transform(test), scaler


# -- folds ----------------------------------------------------------------------------


@dataclass
class FoldSplit:
    """Disjoint cell-line folds stratified by cancer type."""

    folds: dict                    # fold -> {"train": [ids], "test": [ids]}
    k: int
    seed: int
    stratify_key: str = "cancer_type"

    def train_cells(self, fold: int) -> list:
        return self.folds[fold]["train"]

    def test_cells(self, fold: int) -> list:
        return self.folds[fold]["test"]

    def fold_of(self, cell_id: str) -> int:
        if not hasattr(self, "_cell_fold"):
            self._cell_fold = {c: f for f, d in self.folds.items() for c in d["test"]}
        return self._cell_fold[cell_id]

    def to_json_dict(self) -> dict:
        body = {str(f): {"train": d["train"], "test": d["test"]}
                for f, d in sorted(self.folds.items())}
        payload = json.dumps(body, sort_keys=True).encode()
        return {"k": self.k, "seed": self.seed, "stratify_key": self.stratify_key,
                "folds": body, "content_hash": hashlib.sha256(payload).hexdigest()}


def make_folds(cells: Sequence[tuple[str, str]], k: int = 5, seed: int = 0) -> FoldSplit:
    """Deal cell lines into ``k`` folds, round-robin within each cancer type.

    Within a type, ids are shuffled by the seed and dealt starting from a
    type-dependent offset, so per-type fold sizes differ by at most one.
    Deterministic for a fixed seed.
    """
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if len(cells) < k:
        raise ConfigError(f"{len(cells)} cell lines cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    by_type: dict[str, list[str]] = {}
    for cell_id, cancer_type in cells:
        by_type.setdefault(cancer_type, []).append(cell_id)

    assignment: dict[str, int] = {}
    for t_index, cancer_type in enumerate(sorted(by_type)):
        ids = sorted(by_type[cancer_type])
        rng.shuffle(ids)
        for j, cell_id in enumerate(ids):
            assignment[cell_id] = (t_index + j) % k

    folds = {}
    all_ids = [c for c, _ in cells]
    for f in range(k):
        test = [c for c in all_ids if assignment[c] == f]
        train = [c for c in all_ids if assignment[c] != f]
        folds[f] = {"train": train, "test": test}
    return FoldSplit(folds=folds, k=k, seed=seed)


# -- pair assembly ----------------------------------------------------------------------


@dataclass
class PairSample:
    """One (cell line, drug) response with label and cold-start fold tag."""

    cell_id: str
    drug_id: str
    log_ic50: float
    label: int
    fold: int


def apply_type_retention(table: OmicsTable,
                         min_lines: int = MIN_LINES_PER_TYPE):
    """Drop cell lines of cancer types with fewer than ``min_lines`` lines.

    Returns (retained OmicsTable, exclusion report entries).
    """
    counts: dict[str, int] = {}
    for t in table.cancer_types:
        counts[t] = counts.get(t, 0) + 1
    keep = [c for c, t in zip(table.cell_ids, table.cancer_types)
            if counts[t] >= min_lines]
    dropped = [{"cell_id": c, "reason": f"cancer type {t!r} has {counts[t]} < {min_lines} cell lines"}
               for c, t in zip(table.cell_ids, table.cancer_types) if counts[t] < min_lines]
    return table.subset(keep), dropped


def assemble_pairs(responses: Iterable[tuple[str, str, float]],
                   table: OmicsTable,
                   drug_ids: Iterable[str],
                   folds: FoldSplit) -> tuple[list[PairSample], list[dict]]:
    """Label and fold-tag response rows; everything unusable becomes a report entry.

    ``responses`` rows are (drug_id, cell_id, log_ic50). Rows referencing a
    filtered drug or an unknown/excluded cell line, or carrying a non-finite
    response, are excluded with a reason -- exclusions are data, not errors.
    """
    known_drugs = set(drug_ids)
    in_fold = {c for d in folds.folds.values() for c in d["test"]}
    pairs: list[PairSample] = []
    excluded: list[dict] = []
    for drug_id, cell_id, log_ic50 in responses:
        entry = {"drug_id": drug_id, "cell_id": cell_id}
        if drug_id not in known_drugs:
            excluded.append({**entry, "reason": "drug filtered"})
            continue
        if cell_id not in table._row:
            excluded.append({**entry, "reason": "cell line filtered"})
            continue
        if cell_id not in in_fold:
            excluded.append({**entry, "reason": "cell line not in fold split"})
            continue
        value = float(log_ic50)
        if not np.isfinite(value):
            excluded.append({**entry, "reason": "non-finite log_ic50"})
            continue
        pairs.append(PairSample(cell_id=cell_id, drug_id=drug_id, log_ic50=value,
                                label=binarize_response(value),
                                fold=folds.fold_of(cell_id)))
    return pairs, excluded


# -- CSV ingestion -----------------------------------------------------------------------


def read_matrix_csv(path) -> pd.DataFrame:
    """Read a modality matrix: first column cell_id, header = feature names."""
    try:
        frame = pd.read_csv(path, index_col=0)
    except FileNotFoundError:
        raise
    except Exception as exc:  # malformed CSV
        raise DataError(f"{path}: {exc}") from exc
    if frame.index.has_duplicates:
        dup = frame.index[frame.index.duplicated()][0]
        raise DataError(f"{path}: duplicate cell_id {dup!r}")
    return frame


def load_omics_table(paths: Mapping[str, str],
                     cell_meta: Mapping[str, str],
                     min_coverage: float = MIN_COVERAGE):
    """Assemble an :class:`OmicsTable` from per-modality CSV paths.

    ``paths`` must provide ge/mut/cnv/prot/dprot/meth plus ``meth_depth``
    and ``meth_cpg`` matrices for the coverage filter. ``cell_meta`` maps
    cell_id -> cancer_type. Cell lines missing any modality or metadata are
    dropped with a report entry; the methylation keep-mask is the
    intersection of per-line coverage passes so dimensions align.
    """
    required = set(MODALITIES) | {"meth_depth", "meth_cpg"}
    missing = required - set(paths)
    if missing:
        raise DataError(f"manifest lacks modalities: {sorted(missing)}")
    frames = {m: read_matrix_csv(paths[m]) for m in required}

    report: list[dict] = []
    common = None
    for m in sorted(required):
        ids = set(frames[m].index.astype(str))
        common = ids if common is None else common & ids
    meta_ids = set(cell_meta)
    for m in sorted(required):
        for cell in sorted(set(frames[m].index.astype(str)) - (common & meta_ids)):
            reason = ("no cancer-type metadata" if cell not in meta_ids
                      else "missing at least one modality")
            report.append({"cell_id": cell, "reason": reason})
    usable = sorted(common & meta_ids)
    if not usable:
        raise DataError("no cell line is present in every modality file")

    aligned = {m: frames[m].loc[usable] for m in required}
    meth_vals = aligned["meth"].to_numpy(dtype=np.float64)
    depth = aligned["meth_depth"].to_numpy(dtype=np.float64)
    cpg = aligned["meth_cpg"].to_numpy(dtype=np.float64)
    if not (meth_vals.shape == depth.shape == cpg.shape):
        raise DimensionError("meth, meth_depth and meth_cpg matrices must align")
    keep = np.ones(meth_vals.shape[1], dtype=bool)
    for i in range(meth_vals.shape[0]):
        keep &= coverage_mask(depth[i], cpg[i], min_coverage)

    matrices = {
        "ge": aligned["ge"].to_numpy(dtype=np.float64),
        "mut": aligned["mut"].to_numpy(dtype=np.float64),
        "cnv": aligned["cnv"].to_numpy(dtype=np.float64),
        "prot": aligned["prot"].to_numpy(dtype=np.float64),
        "dprot": aligned["dprot"].to_numpy(dtype=np.float64),
        "meth": meth_vals[:, keep],
    }
    names = {m: [str(c) for c in aligned[m].columns] for m in MODALITIES}
    names["meth"] = [n for n, k in zip(names["meth"], keep) if k]
    table = OmicsTable(usable, [cell_meta[c] for c in usable], matrices, names)
    return table, report
