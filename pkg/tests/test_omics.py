"""Preprocessing rules, folds and pair assembly."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drpfuse.omics import (DataError, ConfigError, DimensionError, OmicsTable,
                           asw_integrate, binarize_response, filter_methylation,
                           coverage_mask, scale_features, MinMaxScaler,
                           make_folds, assemble_pairs, apply_type_retention,
                           load_omics_table)
from util import toy_table, write_toy_manifest


# -- ASW integration ---------------------------------------------------------------


def test_asw_basic():
    assert np.allclose(asw_integrate([0.5], [0.1]), [0.6])


def test_asw_zero_shift_is_identity():
    prot = np.array([0.2, -1.0, 3.5])
    assert np.array_equal(asw_integrate(prot, np.zeros(3)), prot)


def test_asw_cancellation():
    assert np.allclose(asw_integrate([1.0, -0.2], [-1.0, 0.2]), [0.0, 0.0])


def test_asw_propagates_missing():
    out = asw_integrate([np.nan, 1.0], [0.5, 0.5])
    assert np.isnan(out[0]) and out[1] == 1.5


def test_asw_length_mismatch():
    with pytest.raises(DimensionError):
        asw_integrate([1.0, 2.0], [1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30).flatmap(
    lambda p: st.tuples(st.just(p),
                        st.lists(st.floats(-1e6, 1e6), min_size=len(p), max_size=len(p)),
                        st.lists(st.floats(-1e6, 1e6), min_size=len(p), max_size=len(p)))))
def test_asw_linearity(data):
    p, d1, d2 = (np.asarray(v) for v in data)
    lhs = asw_integrate(p, d1 + d2)
    rhs = asw_integrate(asw_integrate(p, d1), d2)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


# -- methylation coverage -------------------------------------------------------------


def test_methylation_filter_basic():
    kept = filter_methylation([(0.7, 100, 5)])
    assert np.allclose(kept, [0.7])       # coverage 20


def test_methylation_filter_below_cutoff():
    assert filter_methylation([(0.3, 9, 1)]).size == 0


def test_methylation_filter_boundary_inclusive():
    kept = filter_methylation([(0.5, 10, 1)])
    assert np.allclose(kept, [0.5])       # coverage exactly 10 kept


def test_methylation_preserves_order():
    kept = filter_methylation([(0.1, 100, 1), (0.2, 5, 1), (0.3, 50, 1)])
    assert np.allclose(kept, [0.1, 0.3])


def test_methylation_zero_cpg_is_data_error():
    with pytest.raises(DataError) as err:
        filter_methylation([(0.5, 10, 0)])
    assert "0" in str(err.value)


def test_coverage_mask_intersection_semantics():
    line_a = coverage_mask(np.array([100, 9]), np.array([5, 1]))
    line_b = coverage_mask(np.array([100, 90]), np.array([5, 1]))
    assert np.array_equal(line_a & line_b, [True, False])


# -- binarization -----------------------------------------------------------------


def test_binarize_values():
    assert binarize_response(-2.5) == 1
    assert binarize_response(-2.0) == 0      # strict inequality at the boundary
    assert binarize_response(3.1) == 0


def test_binarize_nan_is_error():
    with pytest.raises(DataError):
        binarize_response(float("nan"))


@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_binarize_matches_definition(v):
    assert binarize_response(v) == int(v < -2.0)


# -- scaling --------------------------------------------------------------------------


def test_scaler_midpoint():
    train = np.array([[0.0], [10.0]])
    _, test_s, _ = scale_features(train, np.array([[5.0]]))
    assert test_s[0, 0] == pytest.approx(0.5)


def test_scaler_constant_column_maps_to_zero():
    train = np.array([[3.0], [3.0]])
    train_s, test_s, _ = scale_features(train, np.array([[99.0]]))
    assert np.all(train_s == 0.0) and np.all(test_s == 0.0)


def test_scaler_extrapolation_not_clipped():
    train = np.array([[0.0], [10.0]])
    _, test_s, _ = scale_features(train, np.array([[20.0]]))
    assert test_s[0, 0] == pytest.approx(2.0)


@settings(max_examples=50)
@given(st.integers(2, 20), st.integers(1, 6), st.integers(0, 10_000))
def test_scaler_train_columns_span_unit_interval(rows, cols, seed):
    rng = np.random.default_rng(seed)
    train = rng.normal(0, 10, (rows, cols))
    train_s, _, scaler = scale_features(train, train)
    live = scaler.range_ != 0
    if live.any():
        assert np.allclose(train_s[:, live].min(axis=0), 0.0)
        assert np.allclose(train_s[:, live].max(axis=0), 1.0)
    assert np.all(train_s[:, ~live] == 0.0)


def test_scaler_column_mismatch():
    scaler = MinMaxScaler().fit(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        scaler.transform(np.zeros((2, 4)))


# -- folds ----------------------------------------------------------------------------


def test_folds_round_robin_even():
    cells = [(f"c{i}", "lung") for i in range(10)]
    split = make_folds(cells, k=5, seed=0)
    sizes = [len(split.test_cells(f)) for f in range(5)]
    assert sizes == [2, 2, 2, 2, 2]


def test_folds_deterministic():
    cells = [(f"c{i}", f"t{i % 3}") for i in range(30)]
    a = make_folds(cells, k=5, seed=42).to_json_dict()
    b = make_folds(cells, k=5, seed=42).to_json_dict()
    assert a == b and a["content_hash"] == b["content_hash"]
    c = make_folds(cells, k=5, seed=43).to_json_dict()
    assert c["folds"] != a["folds"]


def test_folds_partition_and_disjoint():
    cells = [(f"c{i}", f"t{i % 4}") for i in range(23)]
    split = make_folds(cells, k=5, seed=3)
    all_test = [c for f in range(5) for c in split.test_cells(f)]
    assert sorted(all_test) == sorted(c for c, _ in cells)
    for f in range(5):
        assert not set(split.train_cells(f)) & set(split.test_cells(f))
        assert sorted(split.train_cells(f) + split.test_cells(f)) == \
            sorted(c for c, _ in cells)


def test_folds_every_type_in_every_test_fold():
    # 28 types x >= 10 lines: every fold's test set covers every type
    cells = []
    for t in range(28):
        for i in range(10 + t % 3):
            cells.append((f"c{t}_{i}", f"type{t}"))
    split = make_folds(cells, k=5, seed=11)
    types = {c: t for c, t in cells}
    for f in range(5):
        covered = {types[c] for c in split.test_cells(f)}
        assert len(covered) == 28


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31), st.integers(1, 8))
def test_folds_per_type_imbalance_at_most_one(k, seed, n_types):
    rng = np.random.default_rng(seed % 1000)
    cells = []
    for t in range(n_types):
        for i in range(int(rng.integers(k, 4 * k))):
            cells.append((f"c{t}_{i}", f"type{t}"))
    split = make_folds(cells, k=k, seed=seed)
    types = {c: t for c, t in cells}
    for t in {t for _, t in cells}:
        counts = [sum(1 for c in split.test_cells(f) if types[c] == t)
                  for f in range(k)]
        assert max(counts) - min(counts) <= 1


def test_folds_config_errors():
    with pytest.raises(ConfigError):
        make_folds([("a", "t")], k=1)
    with pytest.raises(ConfigError):
        make_folds([("a", "t"), ("b", "t")], k=3)


# -- retention and assembly -------------------------------------------------------------


def test_type_retention_drops_small_types():
    table = toy_table(n_types=2, lines_per_type=12, seed=0)
    # shrink type1 to 9 lines
    keep = [c for c, t in zip(table.cell_ids, table.cancer_types)
            if not (t == "type1" and c.endswith(("_9", "_10", "_11")))]
    table = table.subset(keep)
    retained, dropped = apply_type_retention(table, min_lines=10)
    assert set(retained.cancer_types) == {"type0"}
    assert len(dropped) == 9
    assert all("9 < 10" in d["reason"] for d in dropped)


def test_assemble_pairs_labels_folds_and_exclusions():
    table = toy_table(n_types=2, lines_per_type=10, seed=1)
    cells = list(zip(table.cell_ids, table.cancer_types))
    folds = make_folds(cells, k=5, seed=0)
    responses = [
        ("d1", table.cell_ids[0], -2.5),
        ("d1", table.cell_ids[1], -2.0),
        ("d1", "ghost", -3.0),
        ("dX", table.cell_ids[0], -3.0),
        ("d1", table.cell_ids[2], float("nan")),
    ]
    pairs, excluded = assemble_pairs(responses, table, {"d1"}, folds)
    assert [p.label for p in pairs] == [1, 0]
    assert all(p.fold == folds.fold_of(p.cell_id) for p in pairs)
    reasons = {e["reason"] for e in excluded}
    assert reasons == {"cell line filtered", "drug filtered", "non-finite log_ic50"}


def test_label_invariant_on_assembled_pairs():
    table = toy_table(n_types=2, lines_per_type=10, seed=2)
    folds = make_folds(list(zip(table.cell_ids, table.cancer_types)), k=5, seed=1)
    rng = np.random.default_rng(0)
    responses = [("d", c, float(rng.normal(-2, 1))) for c in table.cell_ids]
    pairs, _ = assemble_pairs(responses, table, {"d"}, folds)
    assert all(p.label == (1 if p.log_ic50 < -2.0 else 0) for p in pairs)


# -- table validation and loading ------------------------------------------------------


def test_table_validates_coded_ranges():
    table = toy_table(seed=3)
    mats = {k: v.copy() for k, v in table.matrices.items()}
    mats["mut"][0, 0] = 0.5
    with pytest.raises(DataError):
        OmicsTable(table.cell_ids, table.cancer_types, mats, table.feature_names)


def test_table_validates_prot_dims():
    table = toy_table(seed=4)
    mats = {k: v.copy() for k, v in table.matrices.items()}
    mats["dprot"] = mats["dprot"][:, :-1]
    with pytest.raises(DimensionError):
        OmicsTable(table.cell_ids, table.cancer_types, mats, table.feature_names)


def test_load_omics_table_applies_coverage_intersection(tmp_path):
    manifest = write_toy_manifest(tmp_path, n_types=2, lines_per_type=10,
                                  meth_clusters=12, low_coverage=3)
    import json
    paths = json.loads(manifest.read_text())["omics"]
    paths = {k: tmp_path / v for k, v in paths.items()}
    import pandas as pd
    meta = pd.read_csv(tmp_path / "cells.csv")
    cell_meta = dict(zip(meta.cell_id, meta.cancer_type))
    table, report = load_omics_table(paths, cell_meta)
    assert table.matrices["meth"].shape[1] == 9
    assert len(table.feature_names["meth"]) == 9
    assert report == []
