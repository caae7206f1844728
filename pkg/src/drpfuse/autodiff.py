"""Dense float64 tensors with reverse-mode automatic differentiation.

Every numeric primitive the network needs (linear layers, attention,
convolutional tokenizers, message passing, losses) is built from the op set
in this module. Ops are eager: each call computes its numpy result
immediately and records a vector-Jacobian closure. ``Tensor.backward()``
replays the closures in reverse topological order with pass-local adjoints,
then adds the pass result into each leaf's ``grad`` buffer -- so calling
``backward`` twice without zeroing accumulates additively.

Ops never mutate their inputs; a tensor is immutable once produced.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "matmul",
    "softmax",
    "layer_norm",
    "conv1d",
    "concat",
    "take_rows",
    "embedding_lookup",
    "scatter_sum",
    "dropout",
    "global_avg_pool",
    "global_max_pool",
]


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class GraphError(ValueError):
    """A backward-pass contract was violated (e.g. non-scalar loss)."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A dense float64 array participating in a reverse-mode graph.

    ``requires_grad`` on a leaf marks it as a trainable input; op outputs
    inherit it from their parents. ``grad`` is populated on leaves by
    ``backward`` and has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp: Optional[Callable[[np.ndarray], tuple]] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], vjp) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._vjp = vjp if out.requires_grad else None
        return out

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{grad})"

    # -- graph control -----------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be a scalar (size 1). Adjoints for interior nodes are
        pass-local; only leaves retain gradients across calls, and repeated
        calls without ``zero_grad`` add up.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        adjoint: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                adjoint[key] = pg if key not in adjoint else adjoint[key] + pg

    # -- elementwise arithmetic --------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _wrap(other)
        out_data = self.data + other.data
        a_shape, b_shape = self.data.shape, other.data.shape

        def vjp(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._from_op(out_data, (self, other), vjp)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = _wrap(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._from_op(a * b, (self, other), vjp)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * (-1.0)

    def __sub__(self, other) -> "Tensor":
        return self + (-_wrap(other))

    def __rsub__(self, other) -> "Tensor":
        return _wrap(other) + (-self)

    def __truediv__(self, other) -> "Tensor":
        other = _wrap(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._from_op(a / b, (self, other), vjp)

    def __rtruediv__(self, other) -> "Tensor":
        return _wrap(other) / self

    def __pow__(self, exponent) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise ShapeError("pow supports only a scalar float exponent")
        p = float(exponent)
        a = self.data

        def vjp(g):
            return (g * p * np.power(a, p - 1.0),)

        return Tensor._from_op(np.power(a, p), (self,), vjp)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- elementwise nonlinearities ----------------------------------------

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return Tensor._from_op(y, (self,), lambda g: (g * y,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._from_op(np.log(a), (self,), lambda g: (g / a,))

    def relu(self) -> "Tensor":
        a = self.data
        mask = a > 0.0
        return Tensor._from_op(a * mask, (self,), lambda g: (g * mask,))

    def gelu(self) -> "Tensor":
        # exact erf form; derivative is Phi(x) + x * phi(x)
        a = self.data
        cdf = 0.5 * (1.0 + erf(a / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        return Tensor._from_op(a * cdf, (self,), lambda g: (g * (cdf + a * pdf),))

    def sigmoid(self) -> "Tensor":
        a = self.data
        y = np.where(a >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                     np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))
        return Tensor._from_op(y, (self,), lambda g: (g * y * (1.0 - y),))

    def clip(self, lo: float, hi: float) -> "Tensor":
        a = self.data
        mask = (a >= lo) & (a <= hi)
        return Tensor._from_op(np.clip(a, lo, hi), (self,), lambda g: (g * mask,))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a_shape = self.data.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            return (_expand_reduced(g, a_shape, axis, keepdims),)

        return Tensor._from_op(np.asarray(out, dtype=np.float64), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a_shape = self.data.shape
        count = self.data.size if axis is None else _axis_count(a_shape, axis)
        out = self.data.mean(axis=axis, keepdims=keepdims)

        def vjp(g):
            return (_expand_reduced(g, a_shape, axis, keepdims) / count,)

        return Tensor._from_op(np.asarray(out, dtype=np.float64), (self,), vjp)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self.data
        out = a.max(axis=axis, keepdims=keepdims)
        peak = a.max(axis=axis, keepdims=True)
        mask = (a == peak).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True)  # ties share the gradient

        def vjp(g):
            return (_expand_reduced(g, a.shape, axis, keepdims) * mask,)

        return Tensor._from_op(np.asarray(out, dtype=np.float64), (self,), vjp)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a_shape = self.data.shape
        return Tensor._from_op(self.data.reshape(shape), (self,),
                               lambda g: (g.reshape(a_shape),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(self.data.transpose(axes), (self,),
                               lambda g: (g.transpose(inverse),))


def _raise_item(t: Tensor):
    raise ShapeError(f"item() requires a size-1 tensor, got shape {t.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _axis_count(shape: tuple, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    return int(np.prod([shape[a] for a in axis]))


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction gradient back to the input shape."""
    g = np.asarray(g, dtype=np.float64)
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape).copy() if shape else g
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape).copy()


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics on leading axes.

    Backward accumulates dA = dC @ B^T and dB = A^T @ dC, summing any
    broadcast leading axes back down (so a 2-D weight shared across a batch
    receives the batch-summed gradient).
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shifted-exponential softmax; rows along ``axis`` sum to one.

    The max-subtraction shift is unconditional, so saturated inputs
    (e.g. additive -1e9 attention masks) underflow cleanly to exact zeros.
    """
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.shape[-1] < 1:
        raise ShapeError(f"layer_norm needs a non-empty last axis, got {x.shape}")
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv
    gd, bd = gain.data, bias.data
    out = xhat * gd + bd
    lead = tuple(range(a.ndim - 1))

    def vjp(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g
        return dx, _unbroadcast(dgain, gd.shape), _unbroadcast(dbias, bd.shape)

    return Tensor._from_op(out, (x, gain, bias), vjp)


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation: (B, c_in, L) x (c_out, c_in, k) -> (B, c_out, L').

    A 2-D input (c_in, L) is treated as a single sample and the batch axis is
    dropped again on output. L' = floor((L + 2*padding - k) / stride) + 1.
    """
    squeeze = x.ndim == 2
    xv = x.reshape((1,) + x.shape) if squeeze else x
    if xv.ndim != 3 or kernels.ndim != 3:
        raise ShapeError(f"conv1d expects (B,c_in,L) and (c_out,c_in,k), got {x.shape} and {kernels.shape}")
    B, c_in, L = xv.shape
    c_out, kc_in, k = kernels.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {xv.shape} vs kernels {kernels.shape}")
    if k > L + 2 * padding:
        raise ShapeError(f"conv1d kernel {k} larger than padded input {L + 2 * padding}")
    if stride < 1:
        raise ShapeError(f"conv1d stride must be >=1, got {stride}")

    Lp = L + 2 * padding
    Lo = (Lp - k) // stride + 1
    idx = np.arange(Lo)[:, None] * stride + np.arange(k)[None, :]
    xp = np.pad(xv.data, ((0, 0), (0, 0), (padding, padding))) if padding else xv.data
    windows = xp[:, :, idx]                                      # (B, c_in, Lo, k)
    out = np.einsum("bclk,ock->bol", windows, kernels.data)
    kd = kernels.data

    def vjp(g):
        gk = np.einsum("bol,bclk->ock", g, windows)
        gw = np.einsum("bol,ock->bclk", g, kd)
        gxp = np.zeros((B * c_in, Lp))
        np.add.at(gxp, (np.arange(B * c_in)[:, None, None], idx[None, :, :]),
                  gw.reshape(B * c_in, Lo, k))
        gx = gxp.reshape(B, c_in, Lp)
        if padding:
            gx = gx[:, :, padding:Lp - padding]
        return gx, gk

    res = Tensor._from_op(out, (xv, kernels), vjp)
    return res.reshape(res.shape[1:]) if squeeze else res


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; backward splits the gradient back."""
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tensors, vjp)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of ``x`` along axis 0; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    a = x.data

    def vjp(g):
        gx = np.zeros_like(a)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor._from_op(a[idx], (x,), vjp)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Row lookup into a learnable table (categorical index -> embedding)."""
    return take_rows(table, indices)


def scatter_sum(values: Tensor, indices, num_rows: int) -> Tensor:
    """Sum rows of ``values`` into ``num_rows`` buckets given by ``indices``."""
    idx = np.asarray(indices, dtype=np.intp)
    out = np.zeros((num_rows,) + values.data.shape[1:])
    np.add.at(out, idx, values.data)

    def vjp(g):
        return (g[idx],)

    return Tensor._from_op(out, (values,), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when ``training`` is False or rate is 0."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the trailing (position) axis."""
    return x.mean(axis=-1)


def global_max_pool(x: Tensor) -> Tensor:
    """Max over the trailing (position) axis."""
    return x.max(axis=-1)
