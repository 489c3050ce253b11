"""Frozen text encoders that stand in for a pre-trained language model.

Both encoders return unit-norm float64 vectors of a fixed dimension. The
hashing encoder needs no data; the precomputed encoder serves vectors that
were produced offline (e.g. by a sentence-transformer) and stored as
line-delimited JSON records ``{"text": ..., "vector": [...]}``.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

__all__ = [
    "TextEncoder",
    "HashingEncoder",
    "PrecomputedEncoder",
    "load_precomputed",
    "encode_item",
    "encode_many",
    "item_text",
    "make_encoder",
]


class TextEncoder(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@lru_cache(maxsize=1 << 18)
def _bucket(feature: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return h % dim, (1.0 if (h >> 63) & 1 == 0 else -1.0)


class HashingEncoder:
    """Signed feature hashing of word unigrams and per-word character 3-grams."""

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    @staticmethod
    def features(text: str) -> list[str]:
        feats = []
        for word in text.lower().split():
            feats.append("w:" + word)
            padded = f"#{word}#"
            feats.extend("c:" + padded[i:i + 3] for i in range(len(padded) - 2))
        return feats

    def encode(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for feat in self.features(text):
            idx, sign = _bucket(feat, self.dim)
            v[idx] += sign
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v = np.zeros(self.dim)
            v[0] = 1.0
            return v
        return v / norm

    def __repr__(self) -> str:
        return f"HashingEncoder(dim={self.dim})"


class PrecomputedEncoder:
    def __init__(self, table: dict[str, np.ndarray]):
        if not table:
            raise ValueError("empty embedding table")
        dims = {v.shape for v in table.values()}
        if len(dims) != 1:
            raise ValueError(f"mismatched vector dimensions in table: {sorted(d[0] for d in dims)}")
        self.dim = next(iter(dims))[0]
        self._table = {k: _unit(np.asarray(v, dtype=np.float64)) for k, v in table.items()}

    def encode(self, text: str) -> np.ndarray:
        try:
            return self._table[text].copy()
        except KeyError:
            raise KeyError(f"no precomputed embedding for text {text!r}") from None

    def __repr__(self) -> str:
        return f"PrecomputedEncoder(n={len(self._table)}, dim={self.dim})"


def load_precomputed(path: str | Path) -> PrecomputedEncoder:
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vector"], dtype=np.float64)
            if vec.ndim != 1 or not np.all(np.isfinite(vec)) or not vec.any():
                raise ValueError(f"{path}:{lineno}: invalid vector for {rec['text']!r}")
            table[rec["text"]] = vec
    return PrecomputedEncoder(table)


def item_text(attr_texts: Iterable[str]) -> str:
    """An item is represented by its attribute texts, sorted and space-joined."""
    texts = sorted(attr_texts)
    if not texts:
        raise ValueError("item has no attributes")
    return " ".join(texts)


def encode_item(encoder: TextEncoder, attr_texts: Iterable[str]) -> np.ndarray:
    return encoder.encode(item_text(attr_texts))


def encode_many(encoder: TextEncoder, texts: Sequence[str]) -> np.ndarray:
    out = np.empty((len(texts), encoder.dim))
    for i, t in enumerate(texts):
        out[i] = encoder.encode(t)
    return out


def make_encoder(kind: str, dim: int = 256) -> TextEncoder:
    """Build an encoder from a CLI-style spec: ``hash`` or ``precomputed:<path>``."""
    if kind == "hash":
        return HashingEncoder(dim)
    if kind.startswith("precomputed:"):
        return load_precomputed(kind.split(":", 1)[1])
    raise ValueError(f"unknown encoder kind {kind!r}")
