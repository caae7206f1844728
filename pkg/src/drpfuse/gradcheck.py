"""Central finite-difference gradient checking against the autodiff engine."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor


def finite_difference(f: Callable[[], float], array: np.ndarray,
                      h: float = 1e-5, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of a scalar function w.r.t. entries of ``array``.

    ``f`` must re-read ``array`` on every call (it is perturbed in place and
    restored). When ``mask`` is given, only the marked entries are probed;
    the rest stay zero.
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    probe = range(flat.size) if mask is None else np.flatnonzero(mask.reshape(-1))
    for i in probe:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise relative error with an absolute floor of 1.

    err = |a - n| / max(1, |a|, |n|): relative for O(1)-and-larger gradients,
    absolute below that, so finite-difference noise on zero gradients does
    not register.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(build: Callable[[], Tensor], leaves: Sequence[Tensor],
                    h: float = 1e-5,
                    masks: Optional[dict] = None) -> float:
    """Compare autodiff gradients of ``build()`` against central differences.

    ``build`` constructs and returns the scalar loss from ``leaves`` (it runs
    once per perturbation). Returns the worst relative error across all
    checked leaves. ``masks`` optionally maps ``id(leaf)`` to a boolean array
    restricting which entries are probed; unprobed entries are asserted to
    hold exactly zero analytic gradient.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = build()
    loss.backward()

    def eval_loss() -> float:
        return float(build().data.reshape(()))

    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        mask = None if masks is None else masks.get(id(leaf))
        numeric = finite_difference(eval_loss, leaf.data, h=h, mask=mask)
        if mask is not None:
            unprobed = ~mask
            if np.any(np.abs(analytic[unprobed]) > 0.0):
                raise AssertionError("analytic gradient nonzero on an entry assumed untouched")
            analytic = analytic * mask
        worst = max(worst, relative_error(analytic, numeric))
    return worst
