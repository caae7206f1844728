"""Signed Shapley attributions over grouped input features.

The coalition value v(S) is the model output averaged over a background
set, with the groups in S taken from the explained sample and everything
else from the background row. The exact estimator enumerates all 2^M
coalitions (M <= 20); the sampled estimator averages marginal
contributions over random feature permutations and is unbiased for the
exact values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["CapacityError", "ShapAttribution", "GeneRanking",
           "exact_shapley", "sampled_shapley", "aggregate_signed"]

EXACT_GROUP_LIMIT = 20


class CapacityError(ValueError):
    """Too many groups for exhaustive enumeration; use sampled_shapley."""


@dataclass
class ShapAttribution:
    """Signed per-group contributions for one explained sample.

    Efficiency: phi_0 + sum(phi) equals the model output on the sample
    (exactly for the exact estimator; enforced by a recorded residual
    correction for the sampled one).
    """

    phi_0: float
    phi: np.ndarray
    sample_id: str = ""
    background_spec: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.phi_0 + self.phi.sum())


@dataclass
class GeneRanking:
    """Genes ordered by aggregated signed score, descending; ties broken
    lexicographically by symbol so the order is strict and reproducible."""

    genes: list
    scores: np.ndarray

    def __post_init__(self):
        if len(self.genes) != len(self.scores):
            raise ValueError("genes and scores length mismatch")

    def __len__(self) -> int:
        return len(self.genes)


def _composed_inputs(masks: np.ndarray, sample: np.ndarray,
                     background: np.ndarray, groups: Sequence[np.ndarray]) -> np.ndarray:
    """Rows for every (mask, background) combination, mask groups from sample."""
    n_masks = masks.shape[0]
    n_bg = background.shape[0]
    rows = np.repeat(background[None, :, :], n_masks, axis=0)   # (masks, bg, F)
    for j, cols in enumerate(groups):
        active = masks[:, j]
        if active.any():
            rows[np.ix_(active, np.arange(n_bg), cols)] = sample[cols]
    return rows.reshape(n_masks * n_bg, -1)


def _coalition_values(model_fn: Callable, masks: np.ndarray, sample: np.ndarray,
                      background: np.ndarray, groups: Sequence[np.ndarray],
                      chunk: int = 4096) -> np.ndarray:
    """v(S) for each mask row: mean model output over the background."""
    n_bg = background.shape[0]
    values = np.empty(masks.shape[0])
    step = max(1, chunk // max(1, n_bg))
    for lo in range(0, masks.shape[0], step):
        part = masks[lo:lo + step]
        rows = _composed_inputs(part, sample, background, groups)
        out = np.asarray(model_fn(rows), dtype=np.float64).reshape(part.shape[0], n_bg)
        values[lo:lo + part.shape[0]] = out.mean(axis=1)
    return values


def _normalize_inputs(sample, background, groups):
    sample = np.asarray(sample, dtype=np.float64).ravel()
    background = np.asarray(background, dtype=np.float64)
    if background.ndim == 1:
        background = background[None, :]
    if background.shape[1] != sample.shape[0]:
        raise ValueError(f"background width {background.shape[1]} != sample width {sample.shape[0]}")
    groups = [np.asarray(g, dtype=np.intp).ravel() for g in groups]
    return sample, background, groups


def exact_shapley(model_fn: Callable, sample, background,
                  groups: Sequence, sample_id: str = "") -> ShapAttribution:
    """Exact Shapley values by full coalition enumeration (<= 20 groups).

    phi_j = sum over S not containing j of |S|!(M-|S|-1)!/M! *
    (v(S u {j}) - v(S)). Efficiency holds to float accumulation error.
    """
    sample, background, groups = _normalize_inputs(sample, background, groups)
    m = len(groups)
    if m > EXACT_GROUP_LIMIT:
        raise CapacityError(
            f"{m} groups exceed the exact enumeration limit of {EXACT_GROUP_LIMIT}; "
            "use sampled_shapley")
    if m == 0:
        raise ValueError("need at least one feature group")

    n_masks = 1 << m
    mask_bits = ((np.arange(n_masks)[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    values = _coalition_values(model_fn, mask_bits, sample, background, groups)
    sizes = mask_bits.sum(axis=1)

    fact = [math.factorial(i) for i in range(m + 1)]
    weight_by_size = np.array([fact[s] * fact[m - s - 1] / fact[m] for s in range(m)])

    ints = np.arange(n_masks)
    phi = np.zeros(m)
    for j in range(m):
        without = ints[(ints >> j) & 1 == 0]
        w = weight_by_size[sizes[without]]
        phi[j] = float(np.sum(w * (values[without | (1 << j)] - values[without])))

    return ShapAttribution(
        phi_0=float(values[0]), phi=phi, sample_id=sample_id,
        background_spec={"n_background": int(background.shape[0])},
        metadata={"estimator": "exact", "n_groups": m})


def sampled_shapley(model_fn: Callable, sample, background, groups: Sequence,
                    n_permutations: int = 200, seed: int = 0,
                    sample_id: str = "") -> ShapAttribution:
    """Monte Carlo permutation estimator of the Shapley values.

    Walks random feature orders and averages marginal contributions; the
    estimate is unbiased. Efficiency is then enforced by distributing the
    residual f(sample) - (phi_0 + sum phi) across groups proportionally to
    |phi_j|; the raw residual is recorded in the metadata.
    """
    if n_permutations < 1:
        raise ValueError(f"need n_permutations >= 1, got {n_permutations}")
    sample, background, groups = _normalize_inputs(sample, background, groups)
    m = len(groups)
    rng = np.random.default_rng(seed)

    phi_0 = float(np.mean(np.asarray(model_fn(background), dtype=np.float64)))
    f_x = float(np.mean(np.asarray(model_fn(sample[None, :]), dtype=np.float64)))

    phi = np.zeros(m)
    masks = np.zeros((n_permutations * m, m), dtype=bool)
    orders = np.empty((n_permutations, m), dtype=np.intp)
    row = 0
    for p in range(n_permutations):
        order = rng.permutation(m)
        orders[p] = order
        current = np.zeros(m, dtype=bool)
        for j in order:
            current[j] = True
            masks[row] = current
            row += 1
    values = _coalition_values(model_fn, masks, sample, background, groups)
    values = values.reshape(n_permutations, m)
    for p in range(n_permutations):
        prev = phi_0
        for pos, j in enumerate(orders[p]):
            phi[j] += values[p, pos] - prev
            prev = values[p, pos]
    phi /= n_permutations

    residual = f_x - (phi_0 + phi.sum())
    weights = np.abs(phi)
    total = weights.sum()
    corrected = phi + residual * (weights / total if total > 0 else np.full(m, 1.0 / m))

    return ShapAttribution(
        phi_0=phi_0, phi=corrected, sample_id=sample_id,
        background_spec={"n_background": int(background.shape[0]), "seed": seed},
        metadata={"estimator": "permutation", "n_permutations": n_permutations,
                  "efficiency_residual": residual})


def aggregate_signed(attributions: Sequence[ShapAttribution],
                     gene_map: Sequence[str]) -> GeneRanking:
    """Average signed contributions per gene across attributions, descending.

    ``gene_map`` assigns each feature group its gene symbol (groups sharing
    a symbol are summed within an attribution first). Any group index
    without a symbol is a data error.
    """
    if not attributions:
        raise ValueError("no attributions to aggregate")
    width = attributions[0].phi.shape[0]
    for a in attributions:
        if a.phi.shape[0] != width:
            raise ValueError("attributions disagree on the number of groups")
    gene_map = list(gene_map)
    if len(gene_map) < width or any(g is None or g == "" for g in gene_map[:width]):
        missing = [i for i in range(width)
                   if i >= len(gene_map) or not gene_map[i]]
        from .omics import DataError
        raise DataError(f"unmapped feature groups: {missing}")

    symbols = sorted(set(gene_map[:width]))
    index = {g: i for i, g in enumerate(symbols)}
    stack = np.zeros((len(attributions), len(symbols)))
    for r, a in enumerate(attributions):
        for j in range(width):
            stack[r, index[gene_map[j]]] += a.phi[j]
    scores = stack.mean(axis=0)

    order = sorted(range(len(symbols)), key=lambda i: (-scores[i], symbols[i]))
    return GeneRanking(genes=[symbols[i] for i in order],
                       scores=scores[order])
