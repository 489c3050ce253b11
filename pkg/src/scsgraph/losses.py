"""Alignment/uniformity task losses and the weighted multi-task objective.

All functions take torch tensors so gradients flow through them. The
``infonce-ce`` variants exist only for the loss-stability comparison.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

__all__ = [
    "TaskBatch",
    "alignment",
    "uniformity",
    "task_losses",
    "task_losses_infonce_ce",
    "total_loss",
    "active_weights",
    "objective_floor",
]


def alignment(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared Euclidean distance between paired rows."""
    x, y = torch.as_tensor(x), torch.as_tensor(y)
    if x.shape[0] == 0:
        raise ValueError("alignment needs at least one pair")
    if x.shape != y.shape:
        raise ValueError(f"pair arrays differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
    return ((x - y) ** 2).sum(dim=-1).mean()


def uniformity(rows: torch.Tensor, t: float = 2.0) -> torch.Tensor:
    """``0.5 * log mean_{x != x'} exp(-t ||x - x'||^2)`` over ordered pairs of distinct rows."""
    rows = torch.as_tensor(rows)
    n = rows.shape[0]
    if n < 2:
        log.warning("uniformity over %d row(s) contributes 0", n)
        return rows.new_zeros(())
    sq = (rows * rows).sum(dim=1)
    d2 = (sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T).clamp(min=0.0)
    iu = torch.triu_indices(n, n, offset=1, device=rows.device)
    vals = -t * d2[iu[0], iu[1]]
    # mean over ordered pairs equals mean over unordered pairs (symmetry)
    return 0.5 * (torch.logsumexp(vals, dim=0) - math.log(vals.numel()))


@dataclass
class TaskBatch:
    """Embedding rows of one training step. Absent tasks are ``None``.

    ``t2_candidates``/``t2_target_index`` are only used by the cross-entropy
    comparison mode (scores over every training item).
    """

    t1_item: torch.Tensor | None = None
    t1_attr: torch.Tensor | None = None
    t1_items: torch.Tensor | None = None
    t1_attrs: torch.Tensor | None = None
    t2_target: torch.Tensor | None = None
    t2_pred: torch.Tensor | None = None
    t2_items: torch.Tensor | None = None
    t2_candidates: torch.Tensor | None = None
    t2_target_index: torch.Tensor | None = None
    t3_item: torch.Tensor | None = None
    t3_term: torch.Tensor | None = None
    t3_items: torch.Tensor | None = None
    t3_terms: torch.Tensor | None = None

    @property
    def active(self) -> tuple[bool, bool, bool]:
        return (self.t1_item is not None and len(self.t1_item) > 0,
                self.t2_pred is not None and len(self.t2_pred) > 0,
                self.t3_item is not None and len(self.t3_item) > 0)

    def _zero(self) -> torch.Tensor:
        for t in (self.t1_item, self.t2_pred, self.t3_item):
            if t is not None:
                return t.new_zeros(())
        return torch.zeros(())


def task_losses(batch: TaskBatch, lam: float) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    a1, a2, a3 = batch.active
    zero = batch._zero()
    L1 = (alignment(batch.t1_item, batch.t1_attr)
          + lam * (uniformity(batch.t1_items) + uniformity(batch.t1_attrs))) if a1 else zero
    L2 = (alignment(batch.t2_target, batch.t2_pred) + lam * uniformity(batch.t2_items)) if a2 else zero
    L3 = (alignment(batch.t3_item, batch.t3_term)
          + lam * (uniformity(batch.t3_items) + uniformity(batch.t3_terms))) if a3 else zero
    return L1, L2, L3


def _info_nce(x: torch.Tensor, y: torch.Tensor, tau: float) -> torch.Tensor:
    logits = (x @ y.T) / tau
    return F.cross_entropy(logits, torch.arange(len(x), device=x.device))


def _sq_norm(rows: torch.Tensor) -> torch.Tensor:
    return (rows * rows).sum(dim=-1).mean()


def task_losses_infonce_ce(batch: TaskBatch, lam: float,
                           tau: float = 0.07) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """In-batch InfoNCE (temperature ``tau``) for tasks 1/3, full-softmax
    cross-entropy for task 2, with squared-norm penalties in place of the
    uniformity terms. Inputs are the unnormalised encoder outputs."""
    a1, a2, a3 = batch.active
    zero = batch._zero()
    L1 = (_info_nce(batch.t1_item, batch.t1_attr, tau)
          + lam * (_sq_norm(batch.t1_items) + _sq_norm(batch.t1_attrs))) if a1 else zero
    L2 = (F.cross_entropy(batch.t2_pred @ batch.t2_candidates.T, batch.t2_target_index)
          + lam * _sq_norm(batch.t2_items)) if a2 else zero
    L3 = (_info_nce(batch.t3_item, batch.t3_term, tau)
          + lam * (_sq_norm(batch.t3_items) + _sq_norm(batch.t3_terms))) if a3 else zero
    return L1, L2, L3


def active_weights(w: Sequence[float], active: Sequence[bool]) -> list[float]:
    """Drop weights of absent tasks and rescale the rest to the original total."""
    total = sum(w)
    kept = sum(wi for wi, a in zip(w, active) if a)
    if kept == 0:
        raise ValueError("no active pre-training task")
    return [wi * total / kept if a else 0.0 for wi, a in zip(w, active)]


def total_loss(losses: Sequence[torch.Tensor], w: Sequence[float]) -> torch.Tensor:
    if any(wi <= 0 for wi in w):
        raise ValueError(f"task weights must be strictly positive, got {list(w)}")
    return sum(wi * L for wi, L in zip(w, losses))


def objective_floor(loss_mode: str, w: Sequence[float], lam: float) -> float:
    """Lower bound of the weighted objective (attained by antipodal pairs).

    Unified mode: alignment is >= 0 and each uniformity term is >= -4 on
    the unit sphere, so L1, L3 >= -8*lam and L2 >= -4*lam. The comparison
    mode is a sum of cross-entropies and squared norms, hence >= 0. Shifting
    epoch losses by this floor makes spread ratios comparable across modes.
    """
    if loss_mode == "unified":
        return -lam * (8.0 * w[0] + 4.0 * w[1] + 8.0 * w[2])
    if loss_mode == "infonce-ce":
        return 0.0
    raise ValueError(f"unknown loss mode {loss_mode!r}")
