"""Ranking metrics and the embedding/attribute correlation analysis."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import EmbeddingTable

__all__ = [
    "recall_at_k",
    "ndcg_at_k",
    "EvalReport",
    "evaluate_rankings",
    "random_ndcg_expectation",
    "attribute_jaccard",
    "pearson",
    "correlation_report",
    "item_pairs",
]


def recall_at_k(ranked: Sequence[str], relevant: set, k: int) -> float:
    if not relevant:
        raise ValueError("relevant set is empty")
    return len(set(ranked[:k]) & relevant) / len(relevant)


def _idcg(n_rel: int, k: int) -> float:
    return sum(1.0 / math.log2(i + 1) for i in range(1, min(n_rel, k) + 1))


def ndcg_at_k(ranked: Sequence[str], relevant: set, k: int) -> float:
    """Binary-relevance NDCG with gain ``1/log2(rank + 1)``."""
    if not relevant:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / math.log2(i + 2) for i, r in enumerate(ranked[:k]) if r in relevant)
    return dcg / _idcg(len(relevant), k)


@dataclass
class EvalReport:
    values: dict[str, float]
    n_users: int
    skipped_users: int = 0
    per_user: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"values": self.values, "n_users": self.n_users, "skipped_users": self.skipped_users}

    def format_table(self) -> str:
        ns = sorted({int(k.split("@")[1]) for k in self.values})
        head = "metric  " + "  ".join(f"@{n:<6d}" for n in ns)
        rows = [head]
        for m in ("Recall", "NDCG"):
            rows.append(f"{m:<7s} " + "  ".join(f"{self.values[f'{m}@{n}']:.4f}" for n in ns))
        rows.append(f"users: {self.n_users} (skipped {self.skipped_users})")
        return "\n".join(rows) + "\n"


def evaluate_rankings(rankings: Mapping[str, Sequence[str]], relevant: Mapping[str, set],
                      ns: Iterable[int] = (5, 20, 40), keep_per_user: bool = False) -> EvalReport:
    """Macro-averaged Recall@N and NDCG@N; users without relevant items are skipped."""
    ns = list(ns)
    sums = {f"{m}@{n}": 0.0 for m in ("Recall", "NDCG") for n in ns}
    per_user = {}
    used = skipped = 0
    for user, ranked in rankings.items():
        rel = set(relevant.get(user, ()))
        if not rel:
            skipped += 1
            continue
        used += 1
        vals = {}
        for n in ns:
            vals[f"Recall@{n}"] = recall_at_k(ranked, rel, n)
            vals[f"NDCG@{n}"] = ndcg_at_k(ranked, rel, n)
        for key, v in vals.items():
            sums[key] += v
        if keep_per_user:
            per_user[user] = vals
    values = {k: (v / used if used else 0.0) for k, v in sums.items()}
    return EvalReport(values, used, skipped, per_user)


def random_ndcg_expectation(n_candidates: int, n_relevant: int, k: int) -> float:
    """Expected NDCG@k of a uniformly random ranking (each rank is relevant w.p. r/n)."""
    p = n_relevant / n_candidates
    dcg = sum(p / math.log2(i + 1) for i in range(1, min(k, n_candidates) + 1))
    return dcg / _idcg(n_relevant, k)


def attribute_jaccard(a: set, b: set) -> float:
    if not a or not b:
        raise ValueError("attribute sets must be nonempty")
    return len(a & b) / len(a | b)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    x = x - x.mean()
    y = y - y.mean()
    sx, sy = math.sqrt(float(x @ x)), math.sqrt(float(y @ y))
    if sx == 0 or sy == 0:
        raise ValueError("zero variance")
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


PAIR_FILTERS = ("all", "scs-existing", "scs-scs", "existing-existing")


def item_pairs(existing: Sequence[str], scs: Sequence[str], pair_filter: str) -> list[tuple[str, str]]:
    if pair_filter == "all":
        return list(itertools.combinations(list(existing) + list(scs), 2))
    if pair_filter == "scs-existing":
        return [(s, e) for s in scs for e in existing]
    if pair_filter == "scs-scs":
        return list(itertools.combinations(scs, 2))
    if pair_filter == "existing-existing":
        return list(itertools.combinations(existing, 2))
    raise ValueError(f"unknown pair filter {pair_filter!r}")


@dataclass
class CorrelationResult:
    pair_filter: str
    n_pairs: int
    r: float
    p_value: float
    significant: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def correlation_report(
    items: EmbeddingTable,
    attr_sets: Mapping[str, set],
    existing: Sequence[str],
    scs: Sequence[str],
    pair_filter: str = "all",
    significance: float = 0.01,
    n_permutations: int = 10_000,
    max_pairs: int = 50_000,
    seed: int = 0,
) -> CorrelationResult:
    """Pearson r between embedding cosine similarity and attribute Jaccard over item pairs.

    Significance is a two-sided permutation test: ``p = (1 + #{|r_perm| >=
    |r|}) / (1 + n_permutations)``. More than ``max_pairs`` pairs are
    subsampled with the same seed.
    """
    rng = np.random.default_rng(seed)
    pairs = item_pairs(existing, scs, pair_filter)
    if len(pairs) > max_pairs:
        keep = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[i] for i in keep]
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs for filter {pair_filter!r}, got {len(pairs)}")
    a = items.vectors[[items.index(p[0]) for p in pairs]]
    b = items.vectors[[items.index(p[1]) for p in pairs]]
    cos = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    jac = np.array([attribute_jaccard(attr_sets[p], attr_sets[q]) for p, q in pairs])
    r = pearson(cos, jac)

    x = cos - cos.mean()
    y = (jac - jac.mean()) / np.linalg.norm(jac - jac.mean())
    x = x / np.linalg.norm(x)
    hits = 0
    chunk = max(1, 2_000_000 // len(pairs))
    done = 0
    while done < n_permutations:
        m = min(chunk, n_permutations - done)
        shuffled = rng.permuted(np.broadcast_to(y, (m, len(y))), axis=1)
        r_perm = shuffled @ x
        hits += int(np.sum(np.abs(r_perm) >= abs(r) - 1e-12))
        done += m
    p = (1 + hits) / (1 + n_permutations)
    return CorrelationResult(pair_filter, len(pairs), r, p, p < significance)
