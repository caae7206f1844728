"""SMILES parser: grammar, featurization, weights, filtering, robustness.

The hand-typed feature matrices below were derived on paper from the
pinned schema (slot order: atomic number index, total degree, charge+5,
chirality, H count, radicals, hybridization, aromatic, in-ring) and
standard organic chemistry, not copied from parser output.
"""

import json
import string
from pathlib import Path

import numpy as np
import pytest

from drpfuse.smiles import (SmilesParseError, parse_smiles, molecular_weight,
                            filter_drugs, ATOM_SCHEMA, BOND_SCHEMA)

DATA = Path(__file__).parent / "data"


def undirected(graph):
    seen = {}
    for (u, v), f in zip(graph.edge_index, graph.edge_features):
        seen[(min(u, v), max(u, v))] = list(f)
    return seen


# -- grammar-forced cases -----------------------------------------------------


def test_methane():
    g = parse_smiles("C")
    assert g.n_atoms == 1 and g.n_bonds == 0
    # carbon, 4 H: degree 4, SP3
    assert g.node_features[0].tolist() == [5, 4, 5, 0, 4, 0, 2, 0, 0]


def test_formaldehyde_double_bond():
    g = parse_smiles("C=O")
    assert g.n_atoms == 2
    assert g.edge_index == [(0, 1), (1, 0)]
    assert np.array_equal(g.edge_features[:, 0], [1, 1])  # double
    assert np.array_equal(g.edge_features[0], g.edge_features[1])


def test_benzene_ring_closure():
    g = parse_smiles("c1ccccc1")
    assert g.n_atoms == 6
    assert len(g.edge_index) == 12
    assert np.all(g.node_features[:, 7] == 1)       # aromatic
    assert np.all(g.node_features[:, 8] == 1)       # in ring
    bonds = undirected(g)
    assert len(bonds) == 6
    assert all(f[0] == BOND_SCHEMA.TYPE_AROMATIC for f in bonds.values())
    assert all(f[2] == 1 for f in bonds.values())   # conjugated
    assert g.node_features[0].tolist() == [5, 3, 5, 0, 1, 0, 1, 1, 1]


def test_acetic_acid_hand_features():
    g = parse_smiles("CC(=O)O")
    expected = [
        [5, 4, 5, 0, 3, 0, 2, 0, 0],   # CH3: SP3
        [5, 3, 5, 0, 0, 0, 1, 0, 0],   # carboxyl C: SP2
        [7, 1, 5, 0, 0, 0, 1, 0, 0],   # =O: SP2
        [7, 2, 5, 0, 1, 0, 1, 0, 0],   # OH: SP2 (conjugated lone pair)
    ]
    assert g.node_features.tolist() == expected
    bonds = undirected(g)
    assert bonds[(0, 1)] == [0, 0, 0]   # C-C single, not conjugated
    assert bonds[(1, 2)] == [1, 0, 1]   # C=O double, conjugated
    assert bonds[(1, 3)] == [0, 0, 1]   # C-OH single, conjugated


def test_pyridine_hand_features():
    g = parse_smiles("c1ccncc1")
    rows = g.node_features.tolist()
    n_row = rows[3]
    assert n_row == [6, 2, 5, 0, 0, 0, 1, 1, 1]     # aromatic N, no H
    for i in (0, 1, 2, 4, 5):
        assert rows[i] == [5, 3, 5, 0, 1, 0, 1, 1, 1]


def test_aniline_amine_is_conjugated_sp2():
    g = parse_smiles("Nc1ccccc1")
    assert g.node_features[0].tolist() == [6, 3, 5, 0, 2, 0, 1, 0, 0]
    assert undirected(g)[(0, 1)] == [0, 0, 1]


def test_acetamide_hand_features():
    g = parse_smiles("CC(N)=O")
    expected = [
        [5, 4, 5, 0, 3, 0, 2, 0, 0],
        [5, 3, 5, 0, 0, 0, 1, 0, 0],
        [6, 3, 5, 0, 2, 0, 1, 0, 0],   # amide N: SP2
        [7, 1, 5, 0, 0, 0, 1, 0, 0],
    ]
    assert g.node_features.tolist() == expected


def test_fluorobenzene_halogen_not_conjugated():
    g = parse_smiles("Fc1ccccc1")
    assert g.node_features[0].tolist() == [8, 1, 5, 0, 0, 0, 2, 0, 0]  # F: SP3
    assert undirected(g)[(0, 1)] == [0, 0, 0]


def test_nitrobenzene_charges():
    g = parse_smiles("[O-][N+](=O)c1ccccc1")
    rows = g.node_features.tolist()
    assert rows[0] == [7, 1, 4, 0, 0, 0, 1, 0, 0]   # O-, charge idx 4, SP2
    assert rows[1] == [6, 3, 6, 0, 0, 0, 1, 0, 0]   # N+, charge idx 6, SP2
    bonds = undirected(g)
    assert all(f[2] == 1 for f in bonds.values() if f[0] != 0 or True)


def test_chirality_tags():
    ccw = parse_smiles("C[C@H](N)O")
    cw = parse_smiles("C[C@@H](N)O")
    assert ccw.node_features[1, 3] == ATOM_SCHEMA.CHIRALITY_CCW
    assert cw.node_features[1, 3] == ATOM_SCHEMA.CHIRALITY_CW
    assert ccw.node_features[1, 4] == 1  # bracket H count


def test_percent_ring_closure():
    g = parse_smiles("C%10CCCCCCCCC%10")
    assert g.n_atoms == 10 and g.n_bonds == 10
    assert np.all(g.node_features[:, 8] == 1)


def test_explicit_aromatic_bond_token():
    g = parse_smiles("c1:c:c:c:c:c1")
    bonds = undirected(g)
    assert all(f[0] == BOND_SCHEMA.TYPE_AROMATIC for f in bonds.values())


def test_triple_bond_and_sp():
    g = parse_smiles("CC#N")
    assert g.node_features[1].tolist()[6] == 0      # SP carbon
    assert g.node_features[2].tolist() == [6, 1, 5, 0, 0, 0, 0, 0, 0]


# -- positioned errors -----------------------------------------------------------


@pytest.mark.parametrize("smiles,fragment", [
    ("C1CC", "unmatched ring closure"),
    ("C(C", "unbalanced"),
    ("CC)", "unbalanced ')'"),
    ("CX", "unknown atom symbol"),
    ("[Xe]C", "unknown atom symbol"),
    ("[C", "unterminated bracket"),
    ("[13C]", "isotope"),
    ("C%1", "two digits"),
    ("C/C=C/C", "stereo bonds"),
    ("C.C", "dot-disconnected"),
    ("C*", "wildcard"),
    ("C==C", "two consecutive bond symbols"),
    ("=CC", "no preceding atom"),
    ("C(=)C", "dangling bond symbol before ')'"),
    ("(CC)", "branch with no preceding atom"),
    ("C=", "dangling bond"),
    ("C(C)(C)(C)(C)C", "valence overflow"),
    ("O=C=O2", "ring closure"),
    ("C11", "an atom to itself"),
    ("C12CC12", "duplicate bond"),
    ("", "empty"),
])
def test_positioned_parse_errors(smiles, fragment):
    with pytest.raises(SmilesParseError) as err:
        parse_smiles(smiles)
    assert fragment.lower() in str(err.value).lower()
    assert err.value.position >= 0


def test_error_reports_byte_offset():
    with pytest.raises(SmilesParseError) as err:
        parse_smiles("CCCCX")
    assert err.value.position == 4


# -- molecular weight -----------------------------------------------------------


def test_weights():
    assert molecular_weight(parse_smiles("C")) == pytest.approx(16.04, abs=0.01)
    assert molecular_weight(parse_smiles("O")) == pytest.approx(18.02, abs=0.01)
    # benzene by hand: 6*12.011 + 6*1.008
    assert molecular_weight(parse_smiles("c1ccccc1")) == pytest.approx(78.11, abs=0.01)


def test_filter_drugs_screening():
    kept, rejected = filter_drugs([("d1", "C"), ("d2", "C1CC")])
    assert [g.drug_id for g in kept] == ["d1"]
    assert rejected[0]["drug_id"] == "d2"
    assert "ring closure" in rejected[0]["reason"]


def test_filter_drugs_weight_cutoff():
    # 90-carbon chain: 90*12.011 + 182*1.008 > 1000
    kept, rejected = filter_drugs([("big", "C" * 90)])
    assert not kept
    assert rejected[0]["reason"].startswith("MW>1000")
    expected = 90 * 12.011 + 182 * 1.008
    assert molecular_weight(parse_smiles("C" * 90)) == pytest.approx(expected, abs=0.05)


def test_filter_drugs_empty_inputs():
    kept, rejected = filter_drugs([])
    assert kept == [] and rejected == []
    kept, rejected = filter_drugs([("", "C"), ("d", "C"), ("d", "CC")])
    assert [g.drug_id for g in kept] == ["d"]
    assert {r["reason"] for r in rejected} == {"empty or missing drug id",
                                               "duplicate drug id"}


# -- structural properties ---------------------------------------------------------


GOLDEN = json.loads((DATA / "smiles_golden.json").read_text())


def test_golden_file_equality_full_corpus():
    """Frozen 50-molecule featurization corpus must match exactly."""
    assert len(GOLDEN["molecules"]) == 50
    for entry in GOLDEN["molecules"]:
        g = parse_smiles(entry["smiles"])
        assert g.node_features.tolist() == entry["nodes"], entry["smiles"]
        bonds = sorted([u, v] + f for (u, v), f in undirected(g).items())
        assert bonds == entry["bonds"], entry["smiles"]


def test_reparse_is_identical():
    for entry in GOLDEN["molecules"]:
        a = parse_smiles(entry["smiles"])
        b = parse_smiles(entry["smiles"])
        assert a.node_features.tolist() == b.node_features.tolist()
        assert a.edge_index == b.edge_index
        assert np.array_equal(a.edge_features, b.edge_features)


def test_edge_symmetry_closed_under_reversal():
    for entry in GOLDEN["molecules"]:
        g = parse_smiles(entry["smiles"])
        directed = {(u, v): tuple(f) for (u, v), f in
                    zip(g.edge_index, map(tuple, g.edge_features))}
        for (u, v), f in directed.items():
            assert directed[(v, u)] == f
            assert u != v
            assert 0 <= u < g.n_atoms and 0 <= v < g.n_atoms


def test_hydrogen_count_never_negative_and_vocab_bounds():
    sizes = ATOM_SCHEMA.vocab_sizes
    for entry in GOLDEN["molecules"]:
        g = parse_smiles(entry["smiles"])
        assert np.all(g.node_features >= 0)
        assert np.all(g.node_features < np.array(sizes))
        assert np.all(g.edge_features < np.array(BOND_SCHEMA.vocab_sizes))


def _random_strings(n, seed, alphabet):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(0, 30, n)
    chars = np.array(list(alphabet))
    return ["".join(chars[rng.integers(0, len(chars), L)]) for L in lengths]


def test_fuzz_parser_totality_small():
    """Graph or positioned error -- never a crash (10k quick fuzz)."""
    alphabet = "BCNOPSFIbclnorsp123456789%()[]@+-=#:H\\/. *xX" + string.ascii_uppercase[:6]
    for text in _random_strings(10_000, 123, alphabet):
        try:
            g = parse_smiles(text)
            assert g.n_atoms >= 1
        except SmilesParseError as err:
            assert 0 <= err.position <= len(text)
