"""Corpus loading and strict cold-start train/validation/test splitting."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

__all__ = [
    "ItemRecord",
    "InteractionRecord",
    "SplitDataset",
    "CorpusError",
    "load_corpus",
    "build_scs_split",
    "build_purchase_sequences",
    "audit_split",
]

DEFAULT_FIELD_MAP = {
    "item_id": "item_id",
    "user_id": "user_id",
    "timestamp": "timestamp",
    "review_text": "review",
}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    contents: Mapping[str, object]

    def __post_init__(self):
        if not self.item_id:
            raise CorpusError("empty item_id")
        if not self.contents:
            raise CorpusError(f"item {self.item_id!r} has no contents")


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int
    review_text: str | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise CorpusError(f"negative timestamp for ({self.user_id}, {self.item_id})")


@dataclass
class LoadReport:
    n_items: int = 0
    n_interactions: int = 0
    malformed_items: int = 0
    malformed_interactions: int = 0
    duplicate_interactions: int = 0


def _iter_json_lines(path: Path):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line


def load_corpus(
    items_path: str | Path,
    interactions_path: str | Path,
    field_map: Mapping[str, str] | None = None,
) -> tuple[list[ItemRecord], list[InteractionRecord], LoadReport]:
    """Parse two JSON-lines files. Malformed lines are skipped and counted.

    ``field_map`` renames the logical fields (item_id, user_id, timestamp,
    review_text) to the names used in the files. Every other key of an item
    record becomes part of its contents.
    """
    fm = {**DEFAULT_FIELD_MAP, **(field_map or {})}
    report = LoadReport()
    items: list[ItemRecord] = []
    seen_items: set[str] = set()
    for lineno, line in _iter_json_lines(Path(items_path)):
        try:
            rec = json.loads(line)
            item_id = str(rec.pop(fm["item_id"]))
            contents = {k: v for k, v in rec.items()
                        if isinstance(v, str) or (isinstance(v, list) and all(isinstance(x, str) for x in v))}
            item = ItemRecord(item_id, contents)
        except (ValueError, KeyError, AttributeError, TypeError) as e:
            report.malformed_items += 1
            log.warning("%s:%d: skipping malformed item (%s)", items_path, lineno, e)
            continue
        if item_id in seen_items:
            raise CorpusError(f"duplicate item_id {item_id!r} at {items_path}:{lineno}")
        seen_items.add(item_id)
        items.append(item)

    inters: list[InteractionRecord] = []
    seen_keys: set[tuple[str, str, int]] = set()
    for lineno, line in _iter_json_lines(Path(interactions_path)):
        try:
            rec = json.loads(line)
            ts = rec[fm["timestamp"]]
            if isinstance(ts, bool) or not isinstance(ts, (int, float)) or ts != int(ts):
                raise ValueError(f"bad timestamp {ts!r}")
            review = rec.get(fm["review_text"])
            inter = InteractionRecord(str(rec[fm["user_id"]]), str(rec[fm["item_id"]]), int(ts),
                                      review if isinstance(review, str) else None)
        except (ValueError, KeyError, AttributeError, TypeError) as e:
            report.malformed_interactions += 1
            log.warning("%s:%d: skipping malformed interaction (%s)", interactions_path, lineno, e)
            continue
        key = (inter.user_id, inter.item_id, inter.timestamp)
        if key in seen_keys:
            report.duplicate_interactions += 1
            continue
        seen_keys.add(key)
        inters.append(inter)

    report.n_items, report.n_interactions = len(items), len(inters)
    if report.malformed_items or report.malformed_interactions:
        log.warning("skipped %d malformed item lines, %d malformed interaction lines",
                    report.malformed_items, report.malformed_interactions)
    return items, inters, report


@dataclass
class SplitDataset:
    """Interaction row indices (into the input list) per split, plus item partitions."""

    train: list[int]
    val: list[int]
    test: list[int]
    train_items: list[str]
    val_items: list[str]
    test_items: list[str]
    users: list[str]
    stage_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    dropped: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "train": self.train, "val": self.val, "test": self.test,
            "train_items": self.train_items, "val_items": self.val_items,
            "test_items": self.test_items, "users": self.users,
            "stage_counts": self.stage_counts, "dropped": self.dropped,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "SplitDataset":
        return cls(**{k: d[k] for k in (
            "train", "val", "test", "train_items", "val_items", "test_items", "users",
            "stage_counts", "dropped")})


def _k_core(rows: list[int], inters: Sequence[InteractionRecord], min_user: int, min_item: int):
    while True:
        uc = Counter(inters[r].user_id for r in rows)
        ic = Counter(inters[r].item_id for r in rows)
        kept = [r for r in rows if uc[inters[r].user_id] >= min_user and ic[inters[r].item_id] >= min_item]
        if len(kept) == len(rows):
            return kept
        rows = kept


def build_scs_split(
    items: Sequence[ItemRecord],
    interactions: Sequence[InteractionRecord],
    attribute_fn: Callable[[ItemRecord], Iterable],
    min_user_inter: int = 20,
    min_item_inter: int = 20,
    min_attrs: int = 5,
    split_ratio: float = 0.9,
    val_frac: float = 0.05,
    val_mode: str = "time",
) -> SplitDataset:
    """Leakage-free strict cold-start split.

    Stages: iterated user/item count filter to a fixpoint; drop items with
    fewer than ``min_attrs`` attributes; sort items by interaction count
    (descending, ties by id); the least popular ``1 - split_ratio`` share of
    items become test items. Validation is carved from the training pool:
    ``val_mode="items"`` takes the last ``val_frac`` of the sorted pool as
    validation items, ``val_mode="time"`` takes the last ``val_frac`` of its
    interactions by timestamp and makes items seen only there validation
    items. Finally val/test interactions of users unseen in train are dropped.
    """
    if min_attrs < 1:
        raise ValueError("min_attrs must be >= 1")
    if not 0 < split_ratio < 1:
        raise ValueError("split_ratio must be in (0, 1)")
    if not 0 <= val_frac < 1:
        raise ValueError("val_frac must be in [0, 1)")
    if val_mode not in ("items", "time"):
        raise ValueError(f"unknown val_mode {val_mode!r}")

    counts: dict[str, dict[str, int]] = {}
    dropped: dict[str, int] = {}

    def record(stage, rows, item_set):
        counts[stage] = {
            "interactions": len(rows),
            "users": len({interactions[r].user_id for r in rows}),
            "items": len(item_set),
        }

    item_by_id = {it.item_id: it for it in items}
    rows = [r for r, x in enumerate(interactions) if x.item_id in item_by_id]
    dropped["unknown_item"] = len(interactions) - len(rows)
    record("input", rows, {interactions[r].item_id for r in rows})

    kept = _k_core(rows, interactions, min_user_inter, min_item_inter)
    dropped["count_filter"] = len(rows) - len(kept)
    rows = kept
    alive = {interactions[r].item_id for r in rows}
    record("count_filter", rows, alive)

    enough = {i for i in alive if len(set(_attr_texts(attribute_fn(item_by_id[i])))) >= min_attrs}
    kept = [r for r in rows if interactions[r].item_id in enough]
    dropped["attribute_filter"] = len(rows) - len(kept)
    rows = kept
    record("attribute_filter", rows, enough)
    if not rows:
        raise CorpusError(f"no interactions survive filtering; stage counts: {counts}")

    pop = Counter(interactions[r].item_id for r in rows)
    ranked = sorted(pop, key=lambda i: (-pop[i], i))
    n_test = math.floor(len(ranked) * (1 - split_ratio) + 1e-9)
    pool, test_items = ranked[:len(ranked) - n_test], ranked[len(ranked) - n_test:]
    pool_set = set(pool)
    pool_rows = [r for r in rows if interactions[r].item_id in pool_set]
    test_rows = [r for r in rows if interactions[r].item_id not in pool_set]

    if val_mode == "items":
        n_val = math.floor(len(pool) * val_frac + 1e-9)
        train_items, val_items = pool[:len(pool) - n_val], pool[len(pool) - n_val:]
        val_set = set(val_items)
        train_rows = [r for r in pool_rows if interactions[r].item_id not in val_set]
        val_rows = [r for r in pool_rows if interactions[r].item_id in val_set]
    else:
        by_time = sorted(pool_rows, key=lambda r: (interactions[r].timestamp, interactions[r].user_id,
                                                   interactions[r].item_id))
        n_val = math.floor(len(by_time) * val_frac + 1e-9)
        head, tail = by_time[:len(by_time) - n_val], by_time[len(by_time) - n_val:]
        head_items = {interactions[r].item_id for r in head}
        val_set = {interactions[r].item_id for r in tail} - head_items
        train_items = [i for i in pool if i not in val_set]
        val_items = [i for i in pool if i in val_set]
        # tail interactions of items still seen in the head stay in train
        train_rows = sorted(head + [r for r in tail if interactions[r].item_id not in val_set])
        val_rows = sorted(r for r in tail if interactions[r].item_id in val_set)
    if not train_rows:
        raise CorpusError(f"empty training split; stage counts: {counts}")

    train_users = {interactions[r].user_id for r in train_rows}
    val_kept = [r for r in val_rows if interactions[r].user_id in train_users]
    test_kept = [r for r in test_rows if interactions[r].user_id in train_users]
    dropped["unseen_user_val"] = len(val_rows) - len(val_kept)
    dropped["unseen_user_test"] = len(test_rows) - len(test_kept)

    split = SplitDataset(
        train=sorted(train_rows), val=sorted(val_kept), test=sorted(test_kept),
        train_items=train_items, val_items=val_items, test_items=test_items,
        users=sorted(train_users), stage_counts=counts, dropped=dropped,
    )
    record("train", split.train, set(train_items))
    record("val", split.val, set(val_items))
    record("test", split.test, set(test_items))
    return split


def _attr_texts(attrs: Iterable) -> list[str]:
    return [getattr(a, "text", a) for a in attrs]


def audit_split(split: SplitDataset, interactions: Sequence[InteractionRecord]) -> dict[str, int]:
    """Count leakage violations by full scan; every count must be zero."""
    train_items, val_items, test_items = map(set, (split.train_items, split.val_items, split.test_items))
    held_out = val_items | test_items
    train_users = {interactions[r].user_id for r in split.train}
    return {
        "item_partition_overlap": len(train_items & val_items) + len(train_items & test_items)
        + len(val_items & test_items),
        "train_touches_heldout_item": sum(interactions[r].item_id in held_out for r in split.train),
        "val_item_outside_partition": sum(interactions[r].item_id not in val_items for r in split.val),
        "test_item_outside_partition": sum(interactions[r].item_id not in test_items for r in split.test),
        "heldout_unseen_user": sum(interactions[r].user_id not in train_users
                                   for r in split.val + split.test),
        "row_in_two_splits": len(set(split.train) & set(split.val)) + len(set(split.train) & set(split.test))
        + len(set(split.val) & set(split.test)),
    }


def build_purchase_sequences(
    interactions: Iterable[InteractionRecord],
    max_seq_len: int = 100,
) -> dict[str, list[str]]:
    """Per-user item sequences, oldest first (ties by item id), keeping the latest ``max_seq_len``."""
    per_user: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for x in interactions:
        per_user[x.user_id].append((x.timestamp, x.item_id))
    out = {}
    for user in sorted(per_user):
        seq = [item for _, item in sorted(per_user[user])]
        out[user] = seq[-max_seq_len:]
    return out
