"""Network building blocks on top of the autodiff engine.

All learnable tensors live in a :class:`ParamStore` under hierarchical
names, so parameter counting, checkpointing, weight decay grouping and
finite-difference sweeps can address every weight uniformly.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_BIAS = -1e9  # additive attention bias; exp() underflows to exactly 0


class ParamStore:
    """Registry of learnable tensors addressable by hierarchical name."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def param(self, name: str, shape: tuple, scale: Optional[float] = None,
              value: Optional[np.ndarray] = None) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if value is not None:
            data = np.asarray(value, dtype=np.float64).reshape(shape)
        else:
            if scale is None:
                scale = 1.0 / math.sqrt(shape[0]) if shape else 1.0
            data = self.rng.normal(0.0, scale, size=shape)
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self) -> list:
        return list(self._params)

    def n_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise ValueError(f"parameter names disagree: {sorted(missing)[:5]}")
        for k, v in state.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != self._params[k].data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self._params[k].data.shape}")
            self._params[k].data = arr.copy()

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self._params):
            h.update(name.encode())
            h.update(self._params[name].data.tobytes())
        return h.hexdigest()


def decayable(name: str) -> bool:
    """Weight-decay / L2 grouping: skip normalization params and biases."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in ("bias", "gain") and ".norm" not in name


class Linear:
    def __init__(self, store: ParamStore, prefix: str, fan_in: int, fan_out: int,
                 zero_init: bool = False):
        scale = 0.0 if zero_init else 1.0 / math.sqrt(fan_in)
        self.weight = store.param(f"{prefix}.weight", (fan_in, fan_out),
                                  value=np.zeros((fan_in, fan_out)) if zero_init else None,
                                  scale=scale)
        self.bias = store.param(f"{prefix}.bias", (fan_out,), value=np.zeros(fan_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm:
    def __init__(self, store: ParamStore, prefix: str, dim: int, eps: float = 1e-5):
        self.gain = store.param(f"{prefix}.gain", (dim,), value=np.ones(dim))
        self.bias = store.param(f"{prefix}.bias", (dim,), value=np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return x.gelu()
    if kind == "relu":
        return x.relu()
    raise ValueError(f"unknown activation {kind!r}")


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention over (B, T, d) with a key mask.

    ``mask`` is a constant (B, T) 0/1 array; masked positions receive an
    additive -1e9 on every attention row, which underflows to exact zero
    weight after the softmax shift.
    """

    def __init__(self, store: ParamStore, prefix: str, dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"token dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.q = Linear(store, f"{prefix}.q", dim, dim)
        self.k = Linear(store, f"{prefix}.k", dim, dim)
        self.v = Linear(store, f"{prefix}.v", dim, dim)
        self.out = Linear(store, f"{prefix}.out", dim, dim)

    def _split(self, x: Tensor, B: int, T: int) -> Tensor:
        return x.reshape(B, T, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        B, T, _ = x.shape
        q = self._split(self.q(x), B, T)
        k = self._split(self.k(x), B, T)
        v = self._split(self.v(x), B, T)
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            bias = (1.0 - np.asarray(mask, dtype=np.float64)) * MASK_BIAS
            scores = scores + Tensor(bias[:, None, None, :])
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, T, self.dim)
        return self.out(mixed)


class TransformerBlock:
    """Pre-norm block: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, heads: int,
                 ffn_mult: int = 4, act: str = "gelu", drop: float = 0.0):
        self.attn = MultiHeadSelfAttention(store, f"{prefix}.attn", dim, heads)
        self.norm1 = LayerNorm(store, f"{prefix}.norm1", dim)
        self.norm2 = LayerNorm(store, f"{prefix}.norm2", dim)
        self.ffn_in = Linear(store, f"{prefix}.ffn_in", dim, ffn_mult * dim)
        self.ffn_out = Linear(store, f"{prefix}.ffn_out", ffn_mult * dim, dim)
        self.act = act
        self.drop = drop

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None,
                 training: bool = False) -> Tensor:
        h = self.attn(self.norm1(x), mask)
        x = x + ad.dropout(h, self.drop, rng, training)
        h = self.ffn_out(activation(self.ffn_in(self.norm2(x)), self.act))
        return x + ad.dropout(h, self.drop, rng, training)


class TransformerStack:
    def __init__(self, store: ParamStore, prefix: str, dim: int, heads: int,
                 depth: int, ffn_mult: int = 4, act: str = "gelu", drop: float = 0.0):
        self.blocks = [TransformerBlock(store, f"{prefix}.block{i}", dim, heads,
                                        ffn_mult, act, drop)
                       for i in range(depth)]

    def __call__(self, x: Tensor, mask=None, rng=None, training: bool = False) -> Tensor:
        for block in self.blocks:
            x = block(x, mask, rng, training)
        return x


def adaptive_pool_matrix(length: int, target: int) -> np.ndarray:
    """(target, length) averaging matrix with contiguous near-equal bins."""
    mat = np.zeros((target, length))
    for i in range(target):
        lo = i * length // target
        hi = max(lo + 1, (i + 1) * length // target)
        mat[i, lo:hi] = 1.0 / (hi - lo)
    return mat


class ModalityTokenizer:
    """Multi-scale 1-D conv tokenizer with channel attention for one modality.

    Each kernel size runs with stride = size over the (1, n) input signal.
    Channel attention: per channel, the vector of per-scale global averages
    passes through a shared two-layer sigmoid gate; the resulting (0, 1)
    weight rescales that channel in every scale. Positions from all scales
    are concatenated as tokens, adaptively average-pooled down to at most
    ``max_tokens``, and projected to the token dimension.
    """

    def __init__(self, store: ParamStore, prefix: str, input_dim: int,
                 kernel_sizes: Sequence[int], channels: int, token_dim: int,
                 max_tokens: int, gate_hidden: int = 8, act: str = "gelu"):
        usable = [k for k in kernel_sizes if k <= input_dim] or [input_dim]
        self.kernel_sizes = usable
        self.input_dim = input_dim
        self.channels = channels
        self.act = act
        self.kernels = [store.param(f"{prefix}.conv{k}.kernel", (channels, 1, k))
                        for k in usable]
        self.gate_in = Linear(store, f"{prefix}.gate_in", len(usable), gate_hidden)
        self.gate_out = Linear(store, f"{prefix}.gate_out", gate_hidden, 1)
        self.proj = Linear(store, f"{prefix}.proj", channels, token_dim)
        lengths = [input_dim // k for k in usable]
        total = sum(lengths)
        self.n_tokens = min(total, max_tokens)
        self._pool = (adaptive_pool_matrix(total, self.n_tokens)
                      if total > self.n_tokens else None)

    def __call__(self, x: Tensor):
        """x: (B, n) modality slab -> ((B, n_tokens, d) tokens, (B, C, 1) gate)."""
        B, n = x.shape
        signal = x.reshape(B, 1, n)
        convs = [ad.conv1d(signal, kern, stride=k, padding=0)
                 for kern, k in zip(self.kernels, self.kernel_sizes)]
        descriptors = ad.concat([ad.global_avg_pool(c).reshape(B, self.channels, 1)
                                 for c in convs], axis=2)          # (B, C, scales)
        gate = self.gate_out(activation(self.gate_in(descriptors), self.act)).sigmoid()
        gated = [c * gate for c in convs]                           # (B, C, L_k)
        tokens = ad.concat([c.transpose(0, 2, 1) for c in gated], axis=1)
        if self._pool is not None:
            tokens = ad.matmul(Tensor(self._pool), tokens)
        return self.proj(tokens), gate


class GraphBatch:
    """Disjoint union of drug graphs for one batch, with padding layout."""

    def __init__(self, graphs: Sequence):
        sizes = [g.n_atoms for g in graphs]
        if any(s == 0 for s in sizes):
            raise ValueError("empty drug graph in batch")
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
        self.sizes = sizes
        self.n_nodes = int(sum(sizes))
        self.node_features = np.concatenate([g.node_features for g in graphs], axis=0)
        pair_blocks, feat_blocks = [], []
        for g, off in zip(graphs, offsets):
            if not g.edge_index:
                continue
            pair_blocks.append(np.asarray(g.edge_index, dtype=np.intp) + off)
            feat_blocks.append(g.edge_features)
        if pair_blocks:
            pairs = np.concatenate(pair_blocks, axis=0)
            self.edge_src = pairs[:, 0]
            self.edge_dst = pairs[:, 1]
            self.edge_features = np.concatenate(feat_blocks, axis=0)
        else:
            self.edge_src = np.zeros(0, dtype=np.intp)
            self.edge_dst = np.zeros(0, dtype=np.intp)
            self.edge_features = np.zeros((0, 3), dtype=np.int64)
        # padded gather map: row n_nodes is a zero sentinel appended post-GNN
        T = max(sizes)
        self.max_nodes = T
        gather = np.full((len(graphs), T), self.n_nodes, dtype=np.intp)
        mask = np.zeros((len(graphs), T))
        for i, (off, s) in enumerate(zip(offsets, sizes)):
            gather[i, :s] = np.arange(off, off + s)
            mask[i, :s] = 1.0
        self.gather = gather
        self.mask = mask


class MessagePassingLayer:
    """One edge-conditioned message-passing step with residual update.

    Messages: for each directed edge (u, v), phi([h_u, h_v, e_uv]) summed
    into u. Update: h_u + psi([h_u, m_u]). phi and psi are two-layer MLPs
    with an internal layer normalization.
    """

    def __init__(self, store: ParamStore, prefix: str, dim: int, act: str = "gelu"):
        self.phi_in = Linear(store, f"{prefix}.phi.lin_in", 3 * dim, dim)
        self.phi_norm = LayerNorm(store, f"{prefix}.phi.norm", dim)
        self.phi_out = Linear(store, f"{prefix}.phi.lin_out", dim, dim)
        self.psi_in = Linear(store, f"{prefix}.psi.lin_in", 2 * dim, dim)
        self.psi_norm = LayerNorm(store, f"{prefix}.psi.norm", dim)
        self.psi_out = Linear(store, f"{prefix}.psi.lin_out", dim, dim)
        self.act = act

    def __call__(self, h: Tensor, edge_emb: Tensor, batch: GraphBatch) -> Tensor:
        if batch.edge_src.size:
            h_u = ad.take_rows(h, batch.edge_src)
            h_v = ad.take_rows(h, batch.edge_dst)
            pair = ad.concat([h_u, h_v, edge_emb], axis=1)
            msg = self.phi_out(activation(self.phi_norm(self.phi_in(pair)), self.act))
            agg = ad.scatter_sum(msg, batch.edge_src, batch.n_nodes)
        else:
            agg = h * 0.0  # no neighbors: zero message
        joint = ad.concat([h, agg], axis=1)
        return h + self.psi_out(activation(self.psi_norm(self.psi_in(joint)), self.act))


class GraphEncoder:
    """Categorical embeddings + L message-passing layers over atom graphs."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, depth: int,
                 node_vocab: Sequence[int], edge_vocab: Sequence[int],
                 act: str = "gelu", embed_scale: float = 0.1):
        self.node_tables = [store.param(f"{prefix}.node_embed{i}", (v, dim), scale=embed_scale)
                            for i, v in enumerate(node_vocab)]
        self.edge_tables = [store.param(f"{prefix}.edge_embed{i}", (v, dim), scale=embed_scale)
                            for i, v in enumerate(edge_vocab)]
        self.layers = [MessagePassingLayer(store, f"{prefix}.mp{i}", dim, act)
                       for i in range(depth)]

    def _embed(self, tables: Sequence[Tensor], codes: np.ndarray) -> Tensor:
        total = ad.embedding_lookup(tables[0], codes[:, 0])
        for i in range(1, len(tables)):
            total = total + ad.embedding_lookup(tables[i], codes[:, i])
        return total

    def __call__(self, batch: GraphBatch) -> Tensor:
        h = self._embed(self.node_tables, batch.node_features)
        if batch.edge_src.size:
            e = self._embed(self.edge_tables, batch.edge_features)
        else:
            e = Tensor(np.zeros((0, h.shape[1])))
        for layer in self.layers:
            h = layer(h, e, batch)
        return h


class AttentionPool:
    """Learnable-query attention pooling over masked token sequences."""

    def __init__(self, store: ParamStore, prefix: str, dim: int):
        self.query = store.param(f"{prefix}.query", (dim, 1))
        self.dim = dim

    def __call__(self, tokens: Tensor, mask: Optional[np.ndarray] = None):
        scores = ad.matmul(tokens, self.query) * (1.0 / math.sqrt(self.dim))
        if mask is not None:
            bias = (1.0 - np.asarray(mask, dtype=np.float64)) * MASK_BIAS
            scores = scores + Tensor(bias[:, :, None])
        weights = ad.softmax(scores, axis=1)            # (B, T, 1)
        return (tokens * weights).sum(axis=1), weights


def masked_mean_pool(tokens: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    if mask is None:
        return tokens.mean(axis=1)
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    return (tokens * Tensor(m)).sum(axis=1) * Tensor(1.0 / m.sum(axis=1))
