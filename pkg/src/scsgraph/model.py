"""Learnable encoders. An interpreter MLP feeds one-layer graph propagation
for items and attributes; purchase sequences go through a single
bidirectional self-attention block.

Parameters are initialised from a numpy ``Generator`` so that a seed fully
determines them independently of torch's global RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graphs import BipartiteGraph

__all__ = [
    "ModelConfig",
    "Interpreter",
    "GraphConv",
    "GraphIndex",
    "SequenceEncoder",
    "PretrainModel",
    "EmbeddingTable",
    "l2_normalize",
    "mask_sequence",
    "draw_mask",
    "gnn_forward",
]


@dataclass(frozen=True)
class ModelConfig:
    d_text: int = 256
    d_hidden: int = 128
    d: int = 64
    max_seq_len: int = 100
    ffn_mult: int = 4


def l2_normalize(raw: torch.Tensor, fallback: torch.Tensor | None = None) -> torch.Tensor:
    """Row-wise unit norm. Zero rows take ``fallback`` (normalised) instead.

    Denominators are made safe before dividing so the untaken branch of
    ``torch.where`` never produces NaN gradients.
    """
    norm = raw.norm(dim=-1, keepdim=True)
    ok = norm > 0
    out = raw / torch.where(ok, norm, torch.ones_like(norm))
    if fallback is None:
        return out
    fnorm = fallback.norm(dim=-1, keepdim=True)
    fb = fallback / torch.where(fnorm > 0, fnorm, torch.ones_like(fnorm))
    return torch.where(ok, out, fb)


def _uniform(rng: np.random.Generator, shape, bound: float) -> torch.Tensor:
    return torch.from_numpy(rng.uniform(-bound, bound, size=shape))


class Interpreter(nn.Module):
    """``d_text -> d_hidden -> d`` with a tanh hidden layer and linear output."""

    def __init__(self, d_text: int, d_hidden: int, d: int):
        super().__init__()
        self.fc1 = nn.Linear(d_text, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        if e.shape[-1] != self.fc1.in_features:
            raise ValueError(f"text embedding dim {e.shape[-1]} != interpreter input {self.fc1.in_features}")
        return self.fc2(torch.tanh(self.fc1(e)))


class GraphIndex:
    """Edge index tensors for mean aggregation over a bipartite graph.

    Node rows are ordered left nodes first, then right nodes.
    """

    def __init__(self, graph: BipartiteGraph):
        self.graph = graph
        self.n_left, self.n_nodes = graph.n_left, graph.n_nodes
        e = graph.edges
        left = torch.from_numpy(e[:, 0].copy())
        right = torch.from_numpy(e[:, 1] + graph.n_left)
        self.src = torch.cat([right, left])
        self.dst = torch.cat([left, right])
        deg = torch.zeros(self.n_nodes, dtype=torch.float64)
        deg.index_add_(0, self.dst, torch.ones(len(self.dst), dtype=torch.float64))
        self.deg = deg

    def mean_neighbors(self, x: torch.Tensor) -> torch.Tensor:
        agg = torch.zeros_like(x).index_add(0, self.dst, x[self.src])
        return agg / self.deg.clamp(min=1.0).to(x.dtype).unsqueeze(1)


class GraphConv(nn.Module):
    """``h(v) = normalize(W_self x_v + W_nbr mean_{u in N(v)} x_u)``."""

    def __init__(self, d: int):
        super().__init__()
        self.W_self = nn.Parameter(torch.empty(d, d))
        self.W_nbr = nn.Parameter(torch.empty(d, d))

    def forward(self, x: torch.Tensor, index: GraphIndex, normalize: bool = True) -> torch.Tensor:
        if x.shape[0] != index.n_nodes:
            raise ValueError(f"got {x.shape[0]} node inputs for {index.n_nodes} nodes")
        raw = x @ self.W_self.T + index.mean_neighbors(x) @ self.W_nbr.T
        return l2_normalize(raw, fallback=x) if normalize else raw


class SequenceEncoder(nn.Module):
    """One pre-LN transformer block with unmasked (bidirectional) attention."""

    def __init__(self, d: int, max_seq_len: int, ffn_mult: int = 4):
        super().__init__()
        self.d, self.max_seq_len = d, max_seq_len
        self.mask_token = nn.Parameter(torch.empty(d))
        self.pos = nn.Parameter(torch.empty(max_seq_len, d))
        self.ln1 = nn.LayerNorm(d)
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.ffn1 = nn.Linear(d, ffn_mult * d)
        self.ffn2 = nn.Linear(ffn_mult * d, d)

    def forward(
        self,
        item_embs: torch.Tensor,
        masked: torch.Tensor,
        padding: torch.Tensor | None = None,
        normalize: bool = True,
    ) -> torch.Tensor:
        """``item_embs`` is ``(B, L, d)``; ``masked``/``padding`` are ``(B, L)`` bool."""
        B, L, d = item_embs.shape
        if L > self.max_seq_len:
            raise ValueError(f"sequence length {L} exceeds max_seq_len {self.max_seq_len}")
        x = torch.where(masked.unsqueeze(-1), self.mask_token.expand_as(item_embs), item_embs)
        x = x + self.pos[:L]
        h = self.ln1(x)
        scores = self.q(h) @ self.k(h).transpose(1, 2) / math.sqrt(d)
        if padding is not None:
            scores = scores.masked_fill(padding.unsqueeze(1), float("-inf"))
        a = x + self.o(torch.softmax(scores, dim=-1) @ self.v(h))
        y = a + self.ffn2(F.gelu(self.ffn1(self.ln2(a))))
        return l2_normalize(y) if normalize else y


class PretrainModel(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.interpreter = Interpreter(cfg.d_text, cfg.d_hidden, cfg.d)
        self.gnn1 = GraphConv(cfg.d)
        self.gnn3 = GraphConv(cfg.d)
        self.seq = SequenceEncoder(cfg.d, cfg.max_seq_len, cfg.ffn_mult)

    @classmethod
    def initialized(cls, cfg: ModelConfig = ModelConfig(), seed: int = 0,
                    dtype: torch.dtype = torch.float32) -> "PretrainModel":
        model = cls(cfg)
        model.reset_parameters(np.random.default_rng(seed))
        return model.to(dtype)

    @torch.no_grad()
    def reset_parameters(self, rng: np.random.Generator) -> None:
        for name, p in self.named_parameters():
            if name.endswith("ln1.weight") or name.endswith("ln2.weight"):
                new = torch.ones(p.shape, dtype=torch.float64)
            elif name.endswith("ln1.bias") or name.endswith("ln2.bias"):
                new = torch.zeros(p.shape, dtype=torch.float64)
            elif name in ("seq.pos", "seq.mask_token"):
                new = torch.from_numpy(rng.normal(0.0, 0.02, size=p.shape))
            elif name.endswith("bias"):
                new = torch.zeros(p.shape, dtype=torch.float64)
            elif p.ndim == 2:
                fan_out, fan_in = p.shape
                new = _uniform(rng, p.shape, math.sqrt(6.0 / (fan_in + fan_out)))
            else:
                raise AssertionError(f"no init rule for {name}")
            p.copy_(new)

    def interpret(self, e: torch.Tensor) -> torch.Tensor:
        return self.interpreter(e)

    def block_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters()]


@dataclass
class EmbeddingTable:
    ids: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        if len(self.ids) != len(self.vectors):
            raise ValueError("ids and vectors differ in length")
        self._index = {k: i for i, k in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ValueError("duplicate ids in embedding table")

    def index(self, key: str) -> int:
        return self._index[key]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.vectors[self._index[key]]

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, keys: Sequence[str]) -> "EmbeddingTable":
        return EmbeddingTable(list(keys), self.vectors[[self._index[k] for k in keys]])


def gnn_forward(graph: BipartiteGraph, node_inputs: np.ndarray | torch.Tensor, conv: GraphConv,
                index: GraphIndex | None = None) -> EmbeddingTable:
    """Propagate ``node_inputs`` (rows: left nodes then right nodes) through ``conv``."""
    x = torch.as_tensor(node_inputs, dtype=conv.W_self.dtype)
    bad = torch.nonzero(~torch.isfinite(x).all(dim=1)).flatten()
    if len(bad):
        k = int(bad[0])
        node = graph.left_ids[k] if k < graph.n_left else graph.right_ids[k - graph.n_left]
        raise ValueError(f"non-finite input features for node {node!r}")
    with torch.no_grad():
        h = conv(x, index or GraphIndex(graph))
    return EmbeddingTable(list(graph.left_ids) + list(graph.right_ids), h.numpy().copy())


def draw_mask(length: int, p_mask: float, rng: np.random.Generator | int) -> np.ndarray:
    """Boolean mask over ``length`` positions; at least one position is always masked."""
    if length < 2:
        raise ValueError("sequences shorter than 2 cannot be masked")
    if not 0 < p_mask <= 1:
        raise ValueError("p_mask must be in (0, 1]")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = rng.random(length) < p_mask
    if not mask.any():
        mask[rng.integers(length)] = True
    return mask


def mask_sequence(seq: Sequence, p_mask: float, rng: np.random.Generator | int):
    """Masked positions of ``seq`` and the items they hide."""
    positions = np.flatnonzero(draw_mask(len(seq), p_mask, rng))
    return positions, [seq[i] for i in positions]
