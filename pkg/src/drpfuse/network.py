"""The dual-branch fusion network: omics tokenizer + transformer, drug
graph encoder + transformer, cross-modal fusion transformer, pooled pair
embedding, and the two task heads (log-IC50 regression, sensitivity
probability)."""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import (ParamStore, Linear, TransformerStack, ModalityTokenizer,
                     GraphBatch, GraphEncoder, AttentionPool, masked_mean_pool,
                     activation)
from .smiles import ATOM_SCHEMA, BOND_SCHEMA

CHECKPOINT_MAGIC = b"DRPF"
CHECKPOINT_VERSION = 1

MODALITY_ORDER = ("ge", "mut", "cnv", "prot", "meth")  # prot is ASW-integrated


@dataclass
class ModelConfig:
    """Architecture and loss hyperparameters.

    Defaults follow the training protocol (focal gamma 2); depth/width
    defaults are the desk-scale reference configuration and every field is
    overridable. Token dim must divide evenly by every branch's head count.
    """

    token_dim: int = 32
    conv_kernel_sizes: tuple = (3, 7, 15)
    conv_channels: int = 8
    tokens_per_modality: int = 8
    omics_heads: int = 4
    omics_depth: int = 2
    drug_heads: int = 4
    drug_depth: int = 2
    fusion_heads: int = 4
    fusion_depth: int = 2
    gnn_depth: int = 2
    pooling: str = "attention"         # or "mean"
    head_hidden: int = 32
    ffn_mult: int = 2
    activation: str = "gelu"
    dropout: float = 0.1
    alpha: float = 1.0                 # regression loss weight
    beta: float = 1.0                  # focal loss weight
    l2_lambda: float = 0.0             # explicit L2 term (optimizer decay is separate)
    focal_gamma: float = 2.0
    learned_positions: bool = False

    def __post_init__(self):
        for name, heads in (("omics", self.omics_heads), ("drug", self.drug_heads),
                            ("fusion", self.fusion_heads)):
            if self.token_dim % heads:
                raise ValueError(f"token_dim {self.token_dim} not divisible by "
                                 f"{name}_heads {heads}")
        if self.gnn_depth < 1:
            raise ValueError(f"gnn_depth must be >= 1, got {self.gnn_depth}")
        if min(self.alpha, self.beta, self.l2_lambda, self.focal_gamma) < 0:
            raise ValueError("alpha, beta, l2_lambda and focal_gamma must be >= 0")
        if self.pooling not in ("attention", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_kernel_sizes"] = list(self.conv_kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "conv_kernel_sizes" in d:
            d["conv_kernel_sizes"] = tuple(d["conv_kernel_sizes"])
        return cls(**d)


@dataclass
class BatchOutput:
    """Per-sample predictions plus the pooled pair embedding."""

    y_hat: Tensor            # (B,) predicted log IC50
    p_hat: Tensor            # (B,) sensitivity probability, strictly in (0,1)
    z: Tensor                # (B, d) pooled joint embedding
    pool_weights: Optional[Tensor] = None
    gates: dict = field(default_factory=dict)


class DrugResponseModel:
    """End-to-end network over (omics modality slabs, drug graph batch)."""

    def __init__(self, config: ModelConfig, modality_dims: dict, seed: int = 0):
        order = [m for m in MODALITY_ORDER if m in modality_dims]
        if not order:
            raise ValueError("no omics modalities enabled")
        unknown = set(modality_dims) - set(MODALITY_ORDER)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        self.config = config
        self.modality_dims = {m: int(modality_dims[m]) for m in order}
        empty = [m for m, d in self.modality_dims.items() if d < 1]
        if empty:
            raise ValueError(f"modalities {empty} have no features after preprocessing; "
                             "disable them or relax the filters")
        self.seed = seed
        self.store = ParamStore(seed)
        cfg, store = config, self.store

        self.tokenizers = {
            m: ModalityTokenizer(store, f"omics.{m}", self.modality_dims[m],
                                 cfg.conv_kernel_sizes, cfg.conv_channels,
                                 cfg.token_dim, cfg.tokens_per_modality,
                                 act=cfg.activation)
            for m in order
        }
        self.n_omics_tokens = sum(t.n_tokens for t in self.tokenizers.values())
        if cfg.learned_positions:
            self.positions = store.param("omics.positions",
                                         (self.n_omics_tokens, cfg.token_dim), scale=0.02)
        else:
            self.positions = None

        self.omics_transformer = TransformerStack(
            store, "omics.transformer", cfg.token_dim, cfg.omics_heads,
            cfg.omics_depth, cfg.ffn_mult, cfg.activation, cfg.dropout)
        self.graph_encoder = GraphEncoder(
            store, "drug.gnn", cfg.token_dim, cfg.gnn_depth,
            ATOM_SCHEMA.vocab_sizes, BOND_SCHEMA.vocab_sizes, act=cfg.activation)
        self.drug_transformer = TransformerStack(
            store, "drug.transformer", cfg.token_dim, cfg.drug_heads,
            cfg.drug_depth, cfg.ffn_mult, cfg.activation, cfg.dropout)
        self.fusion_transformer = TransformerStack(
            store, "fusion.transformer", cfg.token_dim, cfg.fusion_heads,
            cfg.fusion_depth, cfg.ffn_mult, cfg.activation, cfg.dropout)
        self.pool = AttentionPool(store, "fusion.pool", cfg.token_dim)
        self.reg_in = Linear(store, "head.reg.lin_in", cfg.token_dim, cfg.head_hidden)
        self.reg_out = Linear(store, "head.reg.lin_out", cfg.head_hidden, 1)
        self.cls_in = Linear(store, "head.cls.lin_in", cfg.token_dim, cfg.head_hidden)
        self.cls_out = Linear(store, "head.cls.lin_out", cfg.head_hidden, 1)

    # -- branch forwards ----------------------------------------------------

    def encode_omics(self, omics: dict, rng=None, training: bool = False):
        """Tokenize modality slabs -> ((B, n_c, d) tokens, channel gates)."""
        for m in self.modality_dims:
            if m not in omics:
                raise ValueError(f"missing modality slab {m!r}")
            if omics[m].shape[1] != self.modality_dims[m]:
                raise ValueError(f"modality {m}: expected {self.modality_dims[m]} "
                                 f"features, got {omics[m].shape[1]}")
        gates = {}
        token_blocks = []
        for m in self.modality_dims:
            tokens, gate = self.tokenizers[m](Tensor(np.asarray(omics[m], dtype=np.float64)))
            token_blocks.append(tokens)
            gates[m] = gate
        h0 = ad.concat(token_blocks, axis=1)
        if self.positions is not None:
            h0 = h0 + self.positions
        return h0, gates

    def encode_drugs(self, batch: GraphBatch, rng=None, training: bool = False):
        """GNN over the disjoint union, padded to (B, T, d) with its mask."""
        nodes = self.graph_encoder(batch)
        padded = ad.concat([nodes, Tensor(np.zeros((1, self.config.token_dim)))], axis=0)
        h0 = ad.take_rows(padded, batch.gather.reshape(-1))
        h0 = h0.reshape(len(batch.sizes), batch.max_nodes, self.config.token_dim)
        return self.drug_transformer(h0, batch.mask, rng, training), batch.mask

    def fuse(self, h_omics: Tensor, h_drugs: Tensor, drug_mask: np.ndarray,
             rng=None, training: bool = False):
        """Cross-modal attention over the joint token set, then pooling."""
        joint = ad.concat([h_omics, h_drugs], axis=1)
        mask = np.concatenate(
            [np.ones((drug_mask.shape[0], h_omics.shape[1])), drug_mask], axis=1)
        h_joint = self.fusion_transformer(joint, mask, rng, training)
        if self.config.pooling == "attention":
            z, weights = self.pool(h_joint, mask)
        else:
            z, weights = masked_mean_pool(h_joint, mask), None
        return z, weights

    def heads(self, z: Tensor):
        act = self.config.activation
        y = self.reg_out(activation(self.reg_in(z), act)).reshape(z.shape[0])
        logits = self.cls_out(activation(self.cls_in(z), act)).reshape(z.shape[0])
        return y, logits.sigmoid()

    def forward(self, omics: dict, graphs, rng=None, training: bool = False) -> BatchOutput:
        batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch(graphs)
        h0_c, gates = self.encode_omics(omics, rng, training)
        h_c = self.omics_transformer(h0_c, None, rng, training)
        h_d, mask = self.encode_drugs(batch, rng, training)
        z, weights = self.fuse(h_c, h_d, mask, rng, training)
        y_hat, p_hat = self.heads(z)
        return BatchOutput(y_hat=y_hat, p_hat=p_hat, z=z,
                           pool_weights=weights, gates=gates)

    __call__ = forward

    # -- persistence ----------------------------------------------------------

    def save(self, path, step: int = 0) -> None:
        save_checkpoint(path, self, step)

    def n_parameters(self) -> int:
        return self.store.n_parameters()


def save_checkpoint(path, model: DrugResponseModel, step: int = 0) -> None:
    """Single-file binary checkpoint: JSON header + raw float64 blobs."""
    names = sorted(model.store.names())
    header = {
        "format": "drpfuse-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "modality_dims": model.modality_dims,
        "seed": model.seed,
        "step": int(step),
        "params": [{"name": n, "shape": list(model.store[n].data.shape)} for n in names],
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, 0))
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for n in names:
            fh.write(np.ascontiguousarray(model.store[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[DrugResponseModel, int]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a drpfuse checkpoint")
        version, _ = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len).decode())
        model = DrugResponseModel(ModelConfig.from_dict(header["config"]),
                                  header["modality_dims"], seed=header["seed"])
        state = {}
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            state[meta["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        model.store.load_state_dict(state)
    return model, int(header["step"])
