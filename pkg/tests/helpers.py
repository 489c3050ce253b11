"""Shared fixtures-by-function for the test suite."""

import numpy as np
import torch

from scsgraph.graphs import build_graph, build_review_graph
from scsgraph.model import ModelConfig
from scsgraph.text_encoder import HashingEncoder
from scsgraph.trainer import PretrainData

SMALL = ModelConfig(d_text=32, d_hidden=16, d=8, max_seq_len=12)

ACCEPTANCE_LINES: list[str] = []


def record(n: int, ok: bool, detail: str) -> bool:
    """Log the outcome of acceptance criterion ``n`` for the terminal summary."""
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def central_diff_check(fn, params, coords_per_block=6, eps=1e-4, seed=0):
    """Largest relative error between autograd and central differences.

    ``fn`` maps nothing to a scalar tensor using ``params`` (float64 leaves).
    A random subset of coordinates of every block is probed; the error is
    measured on the probed sub-vector of each block.
    """
    rng = np.random.default_rng(seed)
    blocks = params if isinstance(params, dict) else dict(enumerate(params))
    for p in blocks.values():
        p.grad = None
    fn().backward()
    worst = {}
    for name, p in blocks.items():
        flat = p.data.view(-1)
        g = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
        idx = rng.choice(flat.numel(), size=min(coords_per_block, flat.numel()), replace=False)
        num = []
        for i in idx:
            old = float(flat[i])
            with torch.no_grad():
                flat[i] = old + eps
                up = float(fn())
                flat[i] = old - eps
                down = float(fn())
                flat[i] = old
            num.append((up - down) / (2 * eps))
        num = np.array(num)
        ana = g[torch.as_tensor(idx)].numpy()
        scale = max(np.linalg.norm(num), np.linalg.norm(ana))
        worst[name] = 0.0 if scale < 1e-9 else float(np.linalg.norm(num - ana) / scale)
    return worst


def tiny_data(dtype=torch.float64, reviews=True, sequences=True, seed=0) -> PretrainData:
    rng = np.random.default_rng(seed)
    attrs = [f"attr{k}" for k in range(8)]
    items = {f"i{k}": list(rng.choice(attrs, size=3, replace=False)) for k in range(10)}
    g1 = build_graph(items)
    g3 = None
    if reviews:
        terms = [f"term{k}" for k in range(5)]
        revs = {i: [[str(t) for t in rng.choice(terms, size=2, replace=False)]] for i in items}
        g3 = build_review_graph(revs, terms, 100, seed=seed)
    seqs = {}
    if sequences:
        ids = sorted(items)
        seqs = {f"u{u}": [str(x) for x in rng.choice(ids, size=int(rng.integers(2, 7)), replace=False)]
                for u in range(6)}
    return PretrainData.build(g1, g3, seqs, HashingEncoder(SMALL.d_text), SMALL.max_seq_len, dtype)
