"""Synthetic cluster-structured corpora for smoke tests and benchmarks.

Attributes are grouped into latent clusters. Each item belongs to one
cluster, takes most of its attributes from it and a few from other clusters.
Each user shops in one or two clusters. Reviews mention the item's
attributes with opinion words, so review terms carry cluster signal too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["SyntheticSpec", "SyntheticCorpus", "generate_corpus", "write_corpus"]

_FIRST = ("amber azure cedar copper coral dusky ember fern flint frost garnet ginger hazel "
          "indigo ivory jade juniper lilac linen maple marble meadow mint moss nickel oak "
          "ochre onyx opal pearl pewter pine plum quartz raven rose ruby rust sable saffron "
          "sage sand slate smoke spruce steel storm teal thistle umber walnut willow").split()
_SECOND = ("anvil basket beacon bench blanket bottle bucket candle canister carafe crate "
           "cushion drawer easel flask funnel goblet hamper hanger kettle ladle lantern "
           "mallet mirror mortar napkin pitcher planter platter pouch quilt rack satchel "
           "saucer shelf skillet spatula spindle spoon stool teapot thimble trellis trivet "
           "trowel tumbler vase whisk").split()

_POS = ("great", "sturdy", "lovely", "excellent", "handy", "perfect")
_NEG = ("flimsy", "awful", "broken", "useless", "poor", "terrible")


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 300
    n_attrs: int = 50
    n_clusters: int = 10
    own_attrs: tuple[int, int] = (3, 4)  # inclusive range of in-cluster attributes per item
    noise_attrs: int = 2
    user_clusters: tuple[int, int] = (1, 2)
    user_interactions: tuple[int, int] = (20, 40)
    reviews: bool = True
    positive_rate: float = 0.75
    shared_vocab: bool = True  # attribute words recur across clusters
    seed: int = 0


@dataclass
class SyntheticCorpus:
    items: list[dict]
    interactions: list[dict]
    item_cluster: dict[str, int]
    attr_cluster: dict[str, int]
    user_clusters: dict[str, list[int]]


def _attribute_names(n_clusters: int, per: int, shared: bool, rng: np.random.Generator) -> list[str]:
    """Two-word attribute names, cluster-major order.

    With ``shared`` the words are laid out so that no word repeats inside a
    cluster while every word recurs in ``per`` different clusters: surface
    text overlap then says nothing about the latent cluster.
    """
    if not shared:
        pairs = [(a, b) for a in _FIRST for b in _SECOND]
        pick = rng.choice(len(pairs), size=n_clusters * per, replace=False)
        return [f"{pairs[k][0]} {pairs[k][1]}" for k in pick]
    if per > n_clusters or n_clusters > min(len(_FIRST), len(_SECOND)):
        raise ValueError("shared vocabulary needs per <= n_clusters <= word list size")
    step = next((m for m in range(1, n_clusters)
                 if len({(m - 1) * k % n_clusters for k in range(per)}) == per
                 and len({m * k % n_clusters for k in range(per)}) == per), None)
    if step is None:
        raise ValueError(f"no word layout for {n_clusters} clusters of {per}")
    first = rng.choice(_FIRST, size=n_clusters, replace=False)
    second = rng.choice(_SECOND, size=n_clusters, replace=False)
    return [f"{first[(c + k) % n_clusters]} {second[(c + step * k) % n_clusters]}"
            for c in range(n_clusters) for k in range(per)]


def generate_corpus(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    if spec.n_attrs % spec.n_clusters:
        raise ValueError("n_attrs must be a multiple of n_clusters")
    per = spec.n_attrs // spec.n_clusters
    names = _attribute_names(spec.n_clusters, per, spec.shared_vocab, rng)
    clusters = [names[c * per:(c + 1) * per] for c in range(spec.n_clusters)]
    attr_cluster = {a: c for c, group in enumerate(clusters) for a in group}

    items, item_cluster, item_attrs = [], {}, {}
    by_cluster: list[list[str]] = [[] for _ in range(spec.n_clusters)]
    popularity = {}
    for k in range(spec.n_items):
        iid = f"i{k:04d}"
        c = k % spec.n_clusters
        n_own = int(rng.integers(spec.own_attrs[0], spec.own_attrs[1] + 1))
        own = list(rng.choice(clusters[c], size=min(n_own, per), replace=False))
        others = [a for a in names if attr_cluster[a] != c]
        noise = list(rng.choice(others, size=spec.noise_attrs, replace=False))
        attrs = [str(a) for a in own + noise]
        rng.shuffle(attrs)
        item_attrs[iid] = attrs
        item_cluster[iid] = c
        by_cluster[c].append(iid)
        popularity[iid] = float(rng.lognormal(0.0, 0.6))
        items.append({
            "item_id": iid,
            "title": " ".join(attrs[:2]),
            "brand": f"brand{c}",
            "tags": attrs,
            "description": f"Includes {attrs[0]}, {attrs[1]} and {attrs[2]}. "
                           f"Pairs well with any {attrs[3]} or {attrs[-1]}.",
        })

    interactions, user_clusters = [], {}
    for u in range(spec.n_users):
        uid = f"u{u:04d}"
        n_c = int(rng.integers(spec.user_clusters[0], spec.user_clusters[1] + 1))
        cs = sorted(int(c) for c in rng.choice(spec.n_clusters, size=n_c, replace=False))
        user_clusters[uid] = cs
        pool = [i for c in cs for i in by_cluster[c]]
        p = np.array([popularity[i] for i in pool])
        n = min(len(pool), int(rng.integers(spec.user_interactions[0], spec.user_interactions[1] + 1)))
        chosen = rng.choice(len(pool), size=n, replace=False, p=p / p.sum())
        ts = np.sort(rng.integers(1_000_000, 2_000_000, size=n))
        for t, j in zip(ts, rng.permutation(chosen)):
            iid = pool[j]
            rec = {"user_id": uid, "item_id": iid, "timestamp": int(t)}
            if spec.reviews:
                attrs = item_attrs[iid]
                a = attrs[int(rng.integers(len(attrs)))]
                word = (_POS if rng.random() < spec.positive_rate else _NEG)[int(rng.integers(6))]
                rec["review"] = f"The {a} is {word}. Arrived on time."
            interactions.append(rec)
    return SyntheticCorpus(items, interactions, item_cluster, attr_cluster, user_clusters)


def write_corpus(corpus: SyntheticCorpus, directory: str | Path) -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ip, xp = d / "items.jsonl", d / "interactions.jsonl"
    ip.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in corpus.items), encoding="utf-8")
    xp.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in corpus.interactions),
                  encoding="utf-8")
    return ip, xp
