#!/usr/bin/env python3
"""Regenerate tests/data/smiles_golden.json for the 50-molecule corpus.

Two modes:

  --rdkit    Authoritative reference run: featurize the corpus with RDKit
             and map its perception onto the pinned 9/3-slot categorical
             schema. Run this offline wherever rdkit is installed and diff
             against the checked-in file.
  --pinned   Re-derive from the package featurizer itself. Only for
             refreshing the file after an intentional schema change; it
             does not provide an independent reference.

The checked-in golden file must stay byte-stable unless the schema
deliberately changes; the test suite asserts exact equality against it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

CORPUS = [
    "C",
    "CCO",
    "CC(C)O",
    "OCC(O)CO",
    "CC(=O)O",
    "CC(C)=O",
    "CC#N",
    "ClC(Cl)Cl",
    "CS(=O)C",
    "NC(N)=O",
    "NCC(=O)O",
    "C[C@@H](N)C(=O)O",
    "CN1CCC[C@H]1c1cccnc1",
    "CCOC(C)=O",
    "CCNCC",
    "C1CC1",
    "C1CCCCC1",
    "C%10CCCCCCCCC%10",
    "C1CCNCC1",
    "C1COCCN1",
    "C1CCOC1",
    "c1ccccc1",
    "Cc1ccccc1",
    "Oc1ccccc1",
    "Nc1ccccc1",
    "COc1ccccc1",
    "Fc1ccccc1",
    "Clc1ccccc1",
    "Brc1ccccc1",
    "Ic1ccccc1",
    "O=Cc1ccccc1",
    "OC(=O)c1ccccc1",
    "NC(=O)c1ccccc1",
    "[O-][N+](=O)c1ccccc1",
    "C=Cc1ccccc1",
    "C#Cc1ccccc1",
    "c1ccncc1",
    "c1cncnc1",
    "c1ccoc1",
    "c1ccsc1",
    "c1cc[nH]c1",
    "c1cnc[nH]1",
    "c1ccc2ccccc2c1",
    "c1ccc2ncccc2c1",
    "c1ccc2[nH]ccc2c1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "Nc1ccc(cc1)S(N)(=O)=O",
]

OUT_PATH = Path(__file__).resolve().parents[1] / "tests" / "data" / "smiles_golden.json"


def undirected_bonds(edge_index, edge_features):
    """Canonical bond list: (min, max, type, stereo, conj), sorted."""
    seen = {}
    for (u, v), feats in zip(edge_index, edge_features):
        key = (min(u, v), max(u, v))
        seen[key] = [int(key[0]), int(key[1])] + [int(f) for f in feats]
    return sorted(seen.values())


def from_pinned():
    from drpfuse.smiles import parse_smiles
    out = []
    for smiles in CORPUS:
        graph = parse_smiles(smiles)
        out.append({
            "smiles": smiles,
            "nodes": graph.node_features.tolist(),
            "bonds": undirected_bonds(graph.edge_index, graph.edge_features),
        })
    return out


def from_rdkit():
    from rdkit import Chem

    chirality = {"CHI_UNSPECIFIED": 0, "CHI_TETRAHEDRAL_CW": 1,
                 "CHI_TETRAHEDRAL_CCW": 2}
    hybridization = {"SP": 0, "SP2": 1, "SP3": 2, "SP3D": 3, "SP3D2": 4}
    bond_types = {"SINGLE": 0, "DOUBLE": 1, "TRIPLE": 2, "AROMATIC": 3}
    stereo = {"STEREONONE": 0, "STEREOZ": 1, "STEREOE": 2, "STEREOCIS": 3,
              "STEREOTRANS": 4, "STEREOANY": 5}

    def clip(value, lo, hi, vocab):
        return value - lo if lo <= value <= hi else vocab - 1

    out = []
    for smiles in CORPUS:
        mol = Chem.MolFromSmiles(smiles)
        if mol is None:
            raise SystemExit(f"rdkit rejected corpus molecule {smiles!r}")
        nodes = []
        for atom in mol.GetAtoms():
            nodes.append([
                clip(atom.GetAtomicNum(), 1, 118, 119),
                clip(atom.GetTotalDegree(), 0, 10, 12),
                clip(atom.GetFormalCharge(), -5, 5, 12),
                chirality.get(str(atom.GetChiralTag()), 3),
                clip(atom.GetTotalNumHs(), 0, 8, 10),
                clip(atom.GetNumRadicalElectrons(), 0, 4, 6),
                hybridization.get(str(atom.GetHybridization()), 5),
                int(atom.GetIsAromatic()),
                int(atom.IsInRing()),
            ])
        bonds = []
        for bond in mol.GetBonds():
            u, v = bond.GetBeginAtomIdx(), bond.GetEndAtomIdx()
            bonds.append([min(u, v), max(u, v),
                          bond_types.get(str(bond.GetBondType()), 4),
                          stereo.get(str(bond.GetStereo()), 0),
                          int(bond.GetIsConjugated())])
        out.append({"smiles": smiles, "nodes": nodes, "bonds": sorted(bonds)})
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--rdkit", action="store_true")
    mode.add_argument("--pinned", action="store_true")
    parser.add_argument("--check", action="store_true",
                        help="compare against the checked-in file instead of writing")
    args = parser.parse_args()

    molecules = from_rdkit() if args.rdkit else from_pinned()
    payload = {"corpus_version": 1,
               "generator": "rdkit" if args.rdkit else "pinned",
               "molecules": molecules}
    if args.check:
        with open(OUT_PATH) as fh:
            frozen = json.load(fh)
        mismatches = [m["smiles"] for m, f in zip(molecules, frozen["molecules"])
                      if m != f]
        if mismatches:
            print(f"MISMATCH on {len(mismatches)} molecules: {mismatches}")
            return 1
        print("golden file matches")
        return 0
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT_PATH, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {OUT_PATH} ({len(molecules)} molecules)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
