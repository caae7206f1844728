"""Dataset preparation: manifest ingestion, filtering, bundling, splitting.

A manifest is a JSON file mapping the input roles to CSV paths (relative
paths resolve against the manifest's directory):

    {
      "omics": {"ge": ..., "mut": ..., "cnv": ..., "prot": ..., "dprot": ...,
                 "meth": ..., "meth_depth": ..., "meth_cpg": ...},
      "cells": "cells.csv",          # cell_id,cancer_type
      "drugs": "drugs.csv",          # drug_id,smiles
      "responses": "responses.csv"   # drug_id,cell_id,log_ic50
    }

``prepare`` applies drug filtering (parse, id, molecular weight), omics
validation, the cancer-type retention rule, and response screening, then
pickles everything into a deterministic dataset bundle.
"""

from __future__ import annotations

import hashlib
import json
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .omics import (DataError, FoldSplit, OmicsTable, PairSample,
                    apply_type_retention, assemble_pairs, load_omics_table,
                    make_folds)
from .smiles import DrugGraph, filter_drugs

BUNDLE_PICKLE_PROTOCOL = 4


@dataclass
class DatasetBundle:
    """Everything downstream commands need, in one deterministic file."""

    table: OmicsTable
    drugs: dict                       # drug_id -> DrugGraph
    responses: list                   # (drug_id, cell_id, log_ic50) usable rows
    exclusions: dict                  # section -> list of report entries
    stats: dict
    folds: Optional[FoldSplit] = None
    pairs: Optional[list] = None

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            pickle.dump(self, fh, protocol=BUNDLE_PICKLE_PROTOCOL)

    @staticmethod
    def load(path) -> "DatasetBundle":
        with open(path, "rb") as fh:
            bundle = pickle.load(fh)
        if not isinstance(bundle, DatasetBundle):
            raise DataError(f"{path}: not a dataset bundle")
        return bundle


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_manifest(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    for key in ("omics", "cells", "drugs", "responses"):
        if key not in manifest:
            raise DataError(f"{path}: manifest missing {key!r}")
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    resolved = {
        "omics": {k: resolve(v) for k, v in manifest["omics"].items()},
        "cells": resolve(manifest["cells"]),
        "drugs": resolve(manifest["drugs"]),
        "responses": resolve(manifest["responses"]),
    }
    for role in ("cells", "drugs", "responses"):
        if not resolved[role].exists():
            raise FileNotFoundError(f"manifest {role} file {resolved[role]} does not exist")
    for mod, p in resolved["omics"].items():
        if not p.exists():
            raise FileNotFoundError(f"manifest omics[{mod}] file {p} does not exist")
    return resolved


def _read_table(path, columns) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: {exc}") from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing required columns {missing}")
    return frame


def screen_responses(frame: pd.DataFrame, table: OmicsTable, drug_ids) -> tuple[list, list]:
    """Keep rows referencing known drugs/cells with finite responses."""
    known_drugs = set(drug_ids)
    known_cells = set(table.cell_ids)
    usable, excluded = [], []
    for i, row in enumerate(frame.itertuples(index=False), start=2):  # 1-based + header
        drug_id, cell_id = str(row.drug_id), str(row.cell_id)
        try:
            value = float(row.log_ic50)
        except (TypeError, ValueError):
            excluded.append({"row": i, "drug_id": drug_id, "cell_id": cell_id,
                             "reason": "non-numeric log_ic50"})
            continue
        if drug_id not in known_drugs:
            excluded.append({"row": i, "drug_id": drug_id, "cell_id": cell_id,
                             "reason": "drug filtered"})
        elif cell_id not in known_cells:
            excluded.append({"row": i, "drug_id": drug_id, "cell_id": cell_id,
                             "reason": "cell line filtered"})
        elif not np.isfinite(value):
            excluded.append({"row": i, "drug_id": drug_id, "cell_id": cell_id,
                             "reason": "non-finite log_ic50"})
        else:
            usable.append((drug_id, cell_id, value))
    return usable, excluded


def prepare(manifest_path) -> DatasetBundle:
    """Run the full preparation pipeline on a manifest; returns the bundle."""
    manifest = read_manifest(manifest_path)

    cells_frame = _read_table(manifest["cells"], ("cell_id", "cancer_type"))
    cell_meta = {str(r.cell_id): str(r.cancer_type)
                 for r in cells_frame.itertuples(index=False)}

    drugs_frame = _read_table(manifest["drugs"], ("drug_id", "smiles"))
    graphs, drug_rejects = filter_drugs(
        [(str(r.drug_id), str(r.smiles)) for r in drugs_frame.itertuples(index=False)])
    drugs = {g.drug_id: g for g in graphs}

    table, cell_rejects = load_omics_table(manifest["omics"], cell_meta)
    table, retention_rejects = apply_type_retention(table)

    responses_frame = _read_table(manifest["responses"],
                                  ("drug_id", "cell_id", "log_ic50"))
    usable, response_rejects = screen_responses(responses_frame, table, drugs)

    stats = {
        "pairs": len(usable),
        "cells": len(table),
        "drugs": len(drugs),
        "cancer_types": len(set(table.cancer_types)),
        "modality_dims": {m: int(table.matrices[m].shape[1])
                          for m in sorted(table.matrices)},
    }
    exclusions = {
        "drugs": drug_rejects,
        "cells": cell_rejects + retention_rejects,
        "responses": response_rejects,
    }
    return DatasetBundle(table=table, drugs=drugs, responses=usable,
                         exclusions=exclusions, stats=stats)


def split(bundle: DatasetBundle, k: int, seed: int) -> DatasetBundle:
    """Assign cold-start folds and materialize labeled pair samples."""
    cells = list(zip(bundle.table.cell_ids, bundle.table.cancer_types))
    folds = make_folds(cells, k=k, seed=seed)
    pairs, excluded = assemble_pairs(bundle.responses, bundle.table,
                                     bundle.drugs, folds)
    exclusions = dict(bundle.exclusions)
    exclusions["pair_assembly"] = excluded
    stats = dict(bundle.stats)
    stats["pairs"] = len(pairs)
    stats["labeled_sensitive"] = int(sum(p.label for p in pairs))
    return DatasetBundle(table=bundle.table, drugs=bundle.drugs,
                         responses=bundle.responses, exclusions=exclusions,
                         stats=stats, folds=folds, pairs=pairs)
