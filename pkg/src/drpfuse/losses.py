"""Multi-task training objective: MSE + focal loss + optional explicit L2."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .layers import ParamStore, decayable

FOCAL_EPS = 1e-7


def mse_loss(y_hat: Tensor, y) -> Tensor:
    """Mean squared error over predicted vs. observed log IC50."""
    diff = y_hat - Tensor(np.asarray(y, dtype=np.float64))
    return (diff * diff).mean()


def focal_loss(p_hat: Tensor, targets, gamma: float) -> Tensor:
    """Mean focal term; gamma = 0 reduces exactly to binary cross-entropy.

    Probabilities are clamped to [eps, 1 - eps] (eps = 1e-7) before the
    logarithms; the modulating factors use the raw probabilities.
    """
    if gamma < 0:
        raise ValueError(f"focal gamma must be >= 0, got {gamma}")
    t = Tensor(np.asarray(targets, dtype=np.float64))
    p = p_hat.clip(FOCAL_EPS, 1.0 - FOCAL_EPS)
    pos = t * (1.0 - p) ** gamma * p.log()
    neg = (1.0 - t) * p ** gamma * (1.0 - p).log()
    return -(pos + neg).mean()


def l2_penalty(store: ParamStore) -> Tensor:
    """Sum of squared entries of all decayable parameters (no norms/biases)."""
    total = None
    for name, tensor in store.items():
        if not decayable(name):
            continue
        term = (tensor * tensor).sum()
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def total_loss(y_hat: Tensor, y, p_hat: Tensor, targets, store: ParamStore,
               alpha: float, beta: float, lam: float, gamma: float = 2.0) -> Tensor:
    """alpha * MSE + beta * focal + lam * ||decayable params||^2."""
    if min(alpha, beta, lam) < 0:
        raise ValueError("loss weights must be >= 0")
    loss = alpha * mse_loss(y_hat, y) + beta * focal_loss(p_hat, targets, gamma)
    if lam > 0:
        loss = loss + lam * l2_penalty(store)
    return loss
