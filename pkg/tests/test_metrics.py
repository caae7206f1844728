"""Metric suite vs. independent brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drpfuse.metrics import (UndefinedMetricError, rmse, r2, pcc,
                             classification_metrics, auc, compute_report)


def brute_force_auc(scores, labels):
    """Exhaustive pairwise Mann-Whitney comparison with half-credit ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


def test_perfect_predictions():
    y = np.array([0.5, -1.0, 2.0])
    assert rmse(y, y) == 0.0
    assert r2(y, y) == 1.0
    assert pcc(y, y) == pytest.approx(1.0)


def test_mean_predictor_r2_zero():
    y = np.array([0.0, 1.0, 2.0])
    y_hat = np.full(3, y.mean())
    assert r2(y_hat, y) == pytest.approx(0.0)


def test_rmse_hand_value():
    assert rmse([0.0, 1.0, 4.0], [0.0, 1.0, 2.0]) == pytest.approx(np.sqrt(4 / 3))


def test_direct_formula_recomputation_to_1e12():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(2, 60))
        y = rng.normal(size=n)
        y_hat = rng.normal(size=n)
        assert rmse(y_hat, y) == pytest.approx(np.sqrt(np.mean((y_hat - y) ** 2)), abs=1e-12)
        want_r2 = 1 - np.sum((y_hat - y) ** 2) / np.sum((y - y.mean()) ** 2)
        assert r2(y_hat, y) == pytest.approx(want_r2, abs=1e-12)
        want_pcc = np.corrcoef(y_hat, y)[0, 1]
        assert pcc(y_hat, y) == pytest.approx(want_pcc, abs=1e-12)


def test_degenerate_inputs_raise():
    with pytest.raises(UndefinedMetricError):
        r2([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(UndefinedMetricError):
        pcc([1.0, 1.0], [0.0, 1.0])
    with pytest.raises(UndefinedMetricError):
        auc([0.5, 0.6], [1, 1])
    with pytest.raises(UndefinedMetricError):
        classification_metrics([0.5, 0.6], [1, 1])
    with pytest.raises(UndefinedMetricError):
        rmse([1.0], [1.0])
    with pytest.raises(UndefinedMetricError):
        rmse([1.0, 2.0], [1.0, 2.0, 3.0])


def test_auc_perfect_separation():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0


def test_auc_all_ties_is_half():
    assert auc([0.4] * 6, [1, 0, 1, 0, 1, 0]) == pytest.approx(0.5)


def test_auc_hand_case():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_auc_matches_brute_force_100_instances():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(4, 40))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.random(n), 2)  # rounding forces ties
        assert auc(scores, labels) == pytest.approx(
            brute_force_auc(scores, labels), abs=1e-12)


def test_classification_metrics_confusion_counts():
    p = [0.9, 0.6, 0.4, 0.2, 0.7]
    t = [1, 0, 1, 0, 1]
    # preds [1,1,0,0,1] -> TP 2, FN 1, TN 1, FP 1
    acc, sen, spec = classification_metrics(p, t, threshold=0.5)
    assert acc == pytest.approx(3 / 5)
    assert sen == pytest.approx(2 / 3)
    assert spec == pytest.approx(1 / 2)


def test_threshold_is_configurable():
    p = [0.55, 0.45]
    t = [1, 0]
    acc, _, _ = classification_metrics(p, t, threshold=0.6)
    assert acc == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_report_ranges(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    y = rng.normal(size=n)
    y_hat = y + rng.normal(0, 0.5, n)
    t = rng.integers(0, 2, n)
    if t.min() == t.max():
        t[0] = 1 - t[0]
    p_hat = np.clip(rng.random(n), 0.01, 0.99)
    if np.ptp(y) == 0 or np.ptp(y_hat) == 0:
        return
    rep = compute_report(y_hat, y, p_hat, t)
    assert 0.0 <= rep.acc <= 1.0 and 0.0 <= rep.sen <= 1.0
    assert 0.0 <= rep.spec <= 1.0 and 0.0 <= rep.auc <= 1.0
    assert rep.r2 <= 1.0 and -1.0 <= rep.pcc <= 1.0
