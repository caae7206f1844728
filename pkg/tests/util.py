"""Shared builders for synthetic datasets used across the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from drpfuse.omics import FoldSplit, OmicsTable, PairSample, make_folds
from drpfuse.pipeline import DatasetBundle
from drpfuse.smiles import parse_smiles

SYNTH_DRUGS = {
    "ethanol": "CCO",
    "benzene": "c1ccccc1",
    "acetic": "CC(=O)O",
    "isoprop": "CC(C)O",
}


def toy_table(n_types: int = 3, lines_per_type: int = 12, seed: int = 0,
              ge_dim: int = 12, mut_dim: int = 6, cnv_dim: int = 4,
              prot_dim: int = 5, meth_dim: int = 4,
              prot_missing: float = 0.1) -> OmicsTable:
    """Random but contract-valid omics table."""
    rng = np.random.default_rng(seed)
    ids, types = [], []
    for t in range(n_types):
        for i in range(lines_per_type):
            ids.append(f"CL{t}_{i}")
            types.append(f"type{t}")
    n = len(ids)
    prot = rng.normal(0.0, 1.0, (n, prot_dim))
    if prot_missing > 0:
        prot[rng.random(prot.shape) < prot_missing] = np.nan
    matrices = {
        "ge": rng.random((n, ge_dim)),
        "mut": (rng.random((n, mut_dim)) > 0.7).astype(float),
        "cnv": rng.integers(-1, 2, (n, cnv_dim)).astype(float),
        "prot": prot,
        "dprot": rng.normal(0.0, 0.2, (n, prot_dim)),
        "meth": rng.random((n, meth_dim)),
    }
    names = {
        "ge": [f"G{j}" for j in range(ge_dim)],
        "mut": [f"G{j}" for j in range(mut_dim)],       # gene-aligned with GE
        "cnv": [f"G{j}" for j in range(cnv_dim)],
        "prot": [f"P{j}" for j in range(prot_dim)],
        "dprot": [f"P{j}" for j in range(prot_dim)],
        "meth": [f"M{j}" for j in range(meth_dim)],
    }
    return OmicsTable(ids, types, matrices, names)


def synthetic_mapping(table: OmicsTable, graphs: dict, fine: float = 0.2):
    """Noiseless response surface over omics + graph features.

    log_ic50 = -2 + 2.5*(mean(ge[:4]) - 0.5) + 0.12*(n_atoms - 7)
               + fine*(ge[4] - 0.5)
    """
    def response(cell_id: str, drug_id: str) -> float:
        ge = table.matrices["ge"][table.row_index(cell_id)]
        n_atoms = graphs[drug_id].n_atoms
        return float(-2.0 + 2.5 * (ge[:4].mean() - 0.5)
                     + 0.12 * (n_atoms - 7) + fine * (ge[4] - 0.5))
    return response


def synthetic_dataset(n_types: int = 4, lines_per_type: int = 4, seed: int = 0,
                      k_folds: int = 4, fine: float = 0.2) -> DatasetBundle:
    """Bundle with a known noiseless mapping and well-separated labels.

    ge[:4] sits in a low (0.2) or high (0.8) block per cell, so every
    response keeps a margin of at least ~0.15 from the -2.0 boundary and
    both classes appear.
    """
    rng = np.random.default_rng(seed)
    table = toy_table(n_types, lines_per_type, seed=seed)
    for i in range(len(table)):
        level = 0.2 if (i % 2 == 0) else 0.8
        table.matrices["ge"][i, :4] = level + rng.uniform(-0.02, 0.02, 4)
    graphs = {name: parse_smiles(s, drug_id=name) for name, s in SYNTH_DRUGS.items()}
    response = synthetic_mapping(table, graphs, fine=fine)

    cells = list(zip(table.cell_ids, table.cancer_types))
    folds = make_folds(cells, k=k_folds, seed=seed)
    pairs = []
    responses = []
    for cell_id in table.cell_ids:
        for drug_id in graphs:
            y = response(cell_id, drug_id)
            responses.append((drug_id, cell_id, y))
            pairs.append(PairSample(cell_id=cell_id, drug_id=drug_id, log_ic50=y,
                                    label=int(y < -2.0), fold=folds.fold_of(cell_id)))
    stats = {"pairs": len(pairs), "cells": len(table), "drugs": len(graphs),
             "cancer_types": n_types}
    return DatasetBundle(table=table, drugs=graphs, responses=responses,
                         exclusions={}, stats=stats, folds=folds, pairs=pairs)


def write_toy_manifest(root: Path, n_types: int = 3, lines_per_type: int = 12,
                       seed: int = 7, meth_clusters: int = 12,
                       low_coverage: int = 3, drugs=None, responses=None):
    """Materialize a full CSV manifest under ``root``; returns manifest path.

    The last ``low_coverage`` methylation clusters fail the depth/CpG >= 10
    rule in at least one cell line, so they must be filtered out.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids, types = [], []
    for t in range(n_types):
        for i in range(lines_per_type):
            ids.append(f"CL{t}_{i}")
            types.append(f"type{t}")
    index = pd.Index(ids, name="cell_id")
    pd.DataFrame({"cell_id": ids, "cancer_type": types}).to_csv(
        root / "cells.csv", index=False)

    def write(name, data, prefix):
        cols = [f"{prefix}{j}" for j in range(data.shape[1])]
        pd.DataFrame(data, index=index, columns=cols).to_csv(root / f"{name}.csv")

    n = len(ids)
    write("ge", np.round(rng.random((n, 10)), 4), "G")
    write("mut", (rng.random((n, 6)) > 0.7).astype(int), "G")
    write("cnv", rng.integers(-1, 2, (n, 4)), "G")
    prot = rng.normal(0.0, 1.0, (n, 5))
    prot[rng.random(prot.shape) < 0.1] = np.nan
    write("prot", np.round(prot, 4), "P")
    write("dprot", np.round(rng.normal(0.0, 0.2, (n, 5)), 4), "P")
    write("meth", np.round(rng.random((n, meth_clusters)), 4), "M")
    cpg = rng.integers(1, 4, meth_clusters)
    depth = np.empty((n, meth_clusters), dtype=int)
    good = meth_clusters - low_coverage
    depth[:, :good] = cpg[:good] * rng.integers(10, 40, (n, good))
    depth[:, good:] = np.maximum(1, cpg[good:] * rng.integers(0, 9, (n, low_coverage)))
    write("meth_depth", depth, "M")
    write("meth_cpg", np.tile(cpg, (n, 1)), "M")

    if drugs is None:
        drugs = [("drugA", "CCO"), ("drugB", "c1ccccc1O"),
                 ("drugC", "CC(=O)Nc1ccc(O)cc1")]
    pd.DataFrame(drugs, columns=["drug_id", "smiles"]).to_csv(
        root / "drugs.csv", index=False)

    if responses is None:
        responses = []
        kept_drugs = [d for d, _ in drugs]
        for cid in ids:
            for d in kept_drugs:
                responses.append((d, cid, round(float(rng.normal(-2.0, 1.5)), 3)))
    pd.DataFrame(responses, columns=["drug_id", "cell_id", "log_ic50"]).to_csv(
        root / "responses.csv", index=False)

    manifest = {
        "omics": {m: f"{m}.csv" for m in
                  ["ge", "mut", "cnv", "prot", "dprot", "meth",
                   "meth_depth", "meth_cpg"]},
        "cells": "cells.csv",
        "drugs": "drugs.csv",
        "responses": "responses.csv",
    }
    path = root / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path
