"""Regression and classification metrics for the evaluation protocol."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import rankdata

__all__ = ["UndefinedMetricError", "MetricReport", "rmse", "r2", "pcc",
           "classification_metrics", "auc", "compute_report"]


class UndefinedMetricError(ValueError):
    """The metric is mathematically undefined on this input."""


def _paired(y_hat, y, minimum: int = 2):
    a = np.asarray(y_hat, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise UndefinedMetricError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < minimum:
        raise UndefinedMetricError(f"need at least {minimum} samples, got {a.size}")
    return a, b


def rmse(y_hat, y) -> float:
    """Root mean squared error."""
    a, b = _paired(y_hat, y)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def r2(y_hat, y) -> float:
    """Coefficient of determination: 1 - SS_res / SS_tot about mean(y)."""
    a, b = _paired(y_hat, y)
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("r2 undefined: observed values are constant")
    return float(1.0 - np.sum((a - b) ** 2) / ss_tot)


def pcc(y_hat, y) -> float:
    """Pearson correlation coefficient."""
    a, b = _paired(y_hat, y)
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        raise UndefinedMetricError("pcc undefined: a vector is constant")
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def classification_metrics(p_hat, t, threshold: float = 0.5):
    """(accuracy, sensitivity, specificity) at the given probability threshold.

    Sensitivity is recall of the positive (sensitive) class TP/(TP+FN);
    specificity is recall of the negative class TN/(TN+FP). Either is
    undefined when its class is absent.
    """
    p, labels = _paired(p_hat, t, minimum=1)
    labels = labels.astype(int)
    pred = (p >= threshold).astype(int)
    acc = float(np.mean(pred == labels))
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0:
        raise UndefinedMetricError("sensitivity undefined: no positive samples")
    if n_neg == 0:
        raise UndefinedMetricError("specificity undefined: no negative samples")
    sen = float(((pred == 1) & (labels == 1)).sum() / n_pos)
    spec = float(((pred == 0) & (labels == 0)).sum() / n_neg)
    return acc, sen, spec


def auc(p_hat, t) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic.

    Equals U / (n_pos * n_neg) with ties counted half; requires both
    classes present.
    """
    p, labels = _paired(p_hat, t, minimum=2)
    labels = labels.astype(int)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc undefined: a single class is present")
    ranks = rankdata(p, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricReport:
    """The full metric suite over one evaluation split."""

    rmse: float
    r2: float
    pcc: float
    acc: float
    sen: float
    spec: float
    auc: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_report(y_hat, y, p_hat, t, threshold: float = 0.5) -> MetricReport:
    acc, sen, spec = classification_metrics(p_hat, t, threshold)
    return MetricReport(rmse=rmse(y_hat, y), r2=r2(y_hat, y), pcc=pcc(y_hat, y),
                        acc=acc, sen=sen, spec=spec, auc=auc(p_hat, t))
