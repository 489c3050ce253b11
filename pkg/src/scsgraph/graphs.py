"""Immutable bipartite graphs: item-attribute and item-review-term.

Nodes on each side are dense integers in insertion order; string ids live in
``left_ids``/``right_ids``. Inserting items returns a new graph that shares
every untouched neighbor tuple with the base graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "BipartiteGraph",
    "GraphDelta",
    "build_graph",
    "insert_items",
    "scs_delta",
    "build_review_graph",
    "save_graph",
    "load_graph",
]

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    left_ids: tuple[str, ...]
    right_ids: tuple[str, ...]
    left_adj: tuple[tuple[int, ...], ...]
    right_adj: tuple[tuple[int, ...], ...]
    seed: int | None = field(default=None)

    def __post_init__(self):
        if len(self.left_adj) != len(self.left_ids) or len(self.right_adj) != len(self.right_ids):
            raise ValueError("adjacency length does not match node count")

    @property
    def n_left(self) -> int:
        return len(self.left_ids)

    @property
    def n_right(self) -> int:
        return len(self.right_ids)

    @property
    def n_nodes(self) -> int:
        return self.n_left + self.n_right

    @cached_property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.left_adj)

    @cached_property
    def left_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.left_ids)}

    @cached_property
    def right_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.right_ids)}

    def left_degree(self, i: int) -> int:
        return len(self.left_adj[i])

    def right_degree(self, j: int) -> int:
        return len(self.right_adj[j])

    def neighbors_of_left(self, item_id: str) -> list[str]:
        return [self.right_ids[j] for j in self.left_adj[self.left_index[item_id]]]

    def neighbors_of_right(self, right_id: str) -> list[str]:
        return [self.left_ids[i] for i in self.right_adj[self.right_index[right_id]]]

    @cached_property
    def edges(self) -> np.ndarray:
        """``(n_edges, 2)`` int64 array of (left, right) indices, row-major by left."""
        out = np.empty((self.n_edges, 2), dtype=np.int64)
        k = 0
        for i, nbrs in enumerate(self.left_adj):
            n = len(nbrs)
            out[k:k + n, 0] = i
            out[k:k + n, 1] = nbrs
            k += n
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, BipartiteGraph):
            return NotImplemented
        return (self.left_ids == other.left_ids and self.right_ids == other.right_ids
                and self.left_adj == other.left_adj and self.right_adj == other.right_adj)

    def __repr__(self) -> str:
        return f"BipartiteGraph(left={self.n_left}, right={self.n_right}, edges={self.n_edges})"


def _from_edge_lists(left_ids, right_ids, left_sets, seed=None) -> BipartiteGraph:
    right_lists: list[list[int]] = [[] for _ in right_ids]
    left_adj = []
    for i, s in enumerate(left_sets):
        nbrs = tuple(sorted(s))
        left_adj.append(nbrs)
        for j in nbrs:
            right_lists[j].append(i)
    return BipartiteGraph(tuple(left_ids), tuple(right_ids), tuple(left_adj),
                          tuple(tuple(r) for r in right_lists), seed)


def build_graph(items: Mapping[str, Iterable[str]]) -> BipartiteGraph:
    """Item-attribute graph with an undirected edge between each item and its attributes."""
    right_index: dict[str, int] = {}
    left_sets = []
    for item_id, attrs in items.items():
        s = set()
        for a in attrs:
            if a not in right_index:
                right_index[a] = len(right_index)
            s.add(right_index[a])
        if not s:
            raise ValueError(f"item {item_id!r} has no attributes")
        left_sets.append(s)
    return _from_edge_lists(list(items), list(right_index), left_sets)


@dataclass(frozen=True)
class GraphDelta:
    new_items: tuple[str, ...]
    new_right_nodes: tuple[str, ...]
    new_edges: tuple[tuple[str, str], ...]


def scs_delta(graph: BipartiteGraph, items: Mapping[str, Iterable[str]]) -> GraphDelta:
    """Delta that inserts ``items`` with their attributes, adding unseen attributes as new nodes."""
    new_right: dict[str, None] = {}
    edges = []
    for item_id, attrs in items.items():
        attrs = list(dict.fromkeys(attrs))
        if not attrs:
            raise ValueError(f"item {item_id!r} has no attributes")
        for a in attrs:
            if a not in graph.right_index:
                new_right[a] = None
            edges.append((item_id, a))
    return GraphDelta(tuple(items), tuple(new_right), tuple(edges))


def insert_items(graph: BipartiteGraph, delta: GraphDelta) -> BipartiteGraph:
    """Return ``graph`` extended by ``delta``; ``graph`` itself is not modified."""
    for ids, label in ((delta.new_items, "item"), (delta.new_right_nodes, "right node")):
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate {label} id in delta")
    clash = [i for i in delta.new_items if i in graph.left_index]
    clash += [r for r in delta.new_right_nodes if r in graph.right_index]
    if clash:
        raise ValueError(f"delta ids already present in graph: {clash[:5]}")

    left_index = dict(graph.left_index)
    for i in delta.new_items:
        left_index[i] = len(left_index)
    right_index = dict(graph.right_index)
    for r in delta.new_right_nodes:
        right_index[r] = len(right_index)

    added_left: dict[int, set[int]] = {}
    added_right: dict[int, set[int]] = {}
    for item, right in delta.new_edges:
        if item not in left_index or right not in right_index:
            raise ValueError(f"edge ({item!r}, {right!r}) has an unknown endpoint")
        li, rj = left_index[item], right_index[right]
        added_left.setdefault(li, set()).add(rj)
        added_right.setdefault(rj, set()).add(li)

    def extend(adj, n_total, added):
        out = list(adj) + [()] * (n_total - len(adj))
        for k, extra in added.items():
            merged = set(out[k]) | extra
            if len(merged) != len(out[k]):
                out[k] = tuple(sorted(merged))
        return tuple(out)

    return BipartiteGraph(
        graph.left_ids + delta.new_items,
        graph.right_ids + delta.new_right_nodes,
        extend(graph.left_adj, len(left_index), added_left),
        extend(graph.right_adj, len(right_index), added_right),
        graph.seed,
    )


def build_review_graph(
    item_reviews: Mapping[str, Sequence[Iterable[str]]],
    kept_terms: Iterable[str],
    reviews_per_item: int = 100,
    seed: int = 0,
) -> BipartiteGraph:
    """Item-review-term graph from per-review term lists.

    At most ``reviews_per_item`` reviews per item (seeded uniform sample
    without replacement) contribute terms. Items left without any kept term
    stay in the graph as isolated nodes.
    """
    if reviews_per_item < 1:
        raise ValueError("reviews_per_item must be >= 1")
    kept = set(kept_terms)
    rng = np.random.default_rng(seed)
    right_index: dict[str, int] = {}
    left_sets = []
    for item_id, reviews in item_reviews.items():
        if len(reviews) > reviews_per_item:
            picks = np.sort(rng.choice(len(reviews), size=reviews_per_item, replace=False))
            reviews = [reviews[k] for k in picks]
        s = set()
        for terms in reviews:
            for t in terms:
                if t in kept:
                    if t not in right_index:
                        right_index[t] = len(right_index)
                    s.add(right_index[t])
        left_sets.append(s)
    return _from_edge_lists(list(item_reviews), list(right_index), left_sets, seed)


def save_graph(graph: BipartiteGraph, directory: str | Path) -> None:
    """Write manifest.json, ids.txt (left then right) and edges.bin (<i4 pairs)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = graph.left_ids + graph.right_ids
    bad = [i for i in ids if "\n" in i or "\r" in i]
    if bad:
        raise ValueError(f"node ids may not contain newlines: {bad[:3]!r}")
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_left": graph.n_left,
        "n_right": graph.n_right,
        "n_edges": graph.n_edges,
        "seed": graph.seed,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (d / "ids.txt").write_text("".join(i + "\n" for i in ids), encoding="utf-8")
    edges = graph.edges.copy()
    edges[:, 1] += graph.n_left
    (d / "edges.bin").write_bytes(edges.astype("<i4").tobytes())


def load_graph(directory: str | Path) -> BipartiteGraph:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported graph format version {manifest.get('format_version')}")
    ids = (d / "ids.txt").read_text(encoding="utf-8").split("\n")[:-1]
    n_left, n_right = manifest["n_left"], manifest["n_right"]
    if len(ids) != n_left + n_right:
        raise ValueError("id dictionary length does not match manifest")
    edges = np.frombuffer((d / "edges.bin").read_bytes(), dtype="<i4").reshape(-1, 2)
    if len(edges) != manifest["n_edges"]:
        raise ValueError("edge count does not match manifest")
    left_sets: list[set[int]] = [set() for _ in range(n_left)]
    for li, rj in edges.tolist():
        left_sets[li].add(rj - n_left)
    return _from_edge_lists(ids[:n_left], ids[n_left:], left_sets, manifest["seed"])
