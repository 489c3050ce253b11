"""Strict cold-start inference: insert new items, propagate, score by dot product."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .graphs import BipartiteGraph, insert_items, scs_delta
from .model import EmbeddingTable, GraphIndex, PretrainModel
from .text_encoder import TextEncoder, item_text

__all__ = [
    "Recommendation",
    "embed_items",
    "embed_with_scs",
    "embed_user",
    "recommend",
    "recommend_all",
]


@dataclass
class Recommendation:
    user_id: str
    items: list[str]
    scores: list[float]

    def to_json(self) -> dict:
        return {"user_id": self.user_id, "items": self.items, "scores": self.scores}


@torch.no_grad()
def embed_items(graph: BipartiteGraph, model: PretrainModel, encoder: TextEncoder) -> EmbeddingTable:
    """Item-attribute encoder output for every node of ``graph`` (items, then attributes).

    Parameters are only read. Items are represented by the sorted join of
    their neighbouring attribute texts.
    """
    texts = []
    for iid in graph.left_ids:
        nbrs = graph.neighbors_of_left(iid)
        if not nbrs:
            raise ValueError(f"item {iid!r} has no attributes")
        texts.append(item_text(nbrs))
    texts.extend(graph.right_ids)
    dtype = next(model.parameters()).dtype
    e = torch.as_tensor(np.stack([encoder.encode(t) for t in texts]), dtype=dtype)
    h = model.gnn1(model.interpreter(e), GraphIndex(graph))
    return EmbeddingTable(list(graph.left_ids) + list(graph.right_ids), h.numpy().astype(np.float64))


def embed_with_scs(graph: BipartiteGraph, new_items: Mapping[str, Iterable[str]],
                   model: PretrainModel, encoder: TextEncoder) -> tuple[BipartiteGraph, EmbeddingTable]:
    """Insert ``new_items`` (id -> attribute texts) and embed the updated graph."""
    updated = insert_items(graph, scs_delta(graph, new_items))
    return updated, embed_items(updated, model, encoder)


def embed_user(history: Sequence[str], items: EmbeddingTable) -> np.ndarray:
    """Mean of the user's item rows (left unnormalised for dot-product scoring)."""
    if len(history) == 0:
        raise ValueError("empty user history")
    return items.vectors[[items.index(i) for i in history]].mean(axis=0)


def _rank(scores: np.ndarray, ids: Sequence[str], k: int) -> np.ndarray:
    # lexsort: last key is primary
    order = np.lexsort((np.asarray(ids), -scores))
    return order[:k]


def recommend(user_vec: np.ndarray, candidates: EmbeddingTable, k: int, user_id: str = "") -> Recommendation:
    """Top-``k`` candidates by dot product, ties broken by ascending item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    scores = candidates.vectors @ user_vec
    top = _rank(scores, candidates.ids, k)
    return Recommendation(user_id, [candidates.ids[i] for i in top], [float(scores[i]) for i in top])


def recommend_all(histories: Mapping[str, Sequence[str]], items: EmbeddingTable,
                  candidates: EmbeddingTable, k: int) -> list[Recommendation]:
    users = sorted(histories)
    if not users:
        return []
    U = np.stack([embed_user(histories[u], items) for u in users])
    S = U @ candidates.vectors.T
    ids = np.asarray(candidates.ids)
    out = []
    for u, scores in zip(users, S):
        top = _rank(scores, ids, k)
        out.append(Recommendation(u, ids[top].tolist(), scores[top].tolist()))
    return out
