"""Multi-task pre-training loop, batch assembly and checkpoints."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .config import TrainConfig
from .graphs import BipartiteGraph
from .losses import TaskBatch, active_weights, task_losses, task_losses_infonce_ce
from .model import GraphIndex, ModelConfig, PretrainModel, draw_mask
from .text_encoder import TextEncoder, item_text

log = logging.getLogger(__name__)

__all__ = [
    "PretrainData",
    "BatchPlan",
    "TrainState",
    "TrainResult",
    "NonFiniteLossError",
    "CheckpointError",
    "make_step_batch",
    "embed_batch",
    "batch_losses",
    "full_loss",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, result: "TrainResult"):
        super().__init__(message)
        self.result = result


class CheckpointError(ValueError):
    pass


# --------------------------------------------------------------------------
# data


@dataclass
class PretrainData:
    """Frozen inputs of pre-training: graphs, text features and sequences.

    Node rows of each graph are left (items) then right (attributes or
    review terms); ``g1_rows``/``g3_rows`` map them to rows of ``text_matrix``.
    Sequences hold item-attribute-graph left indices.
    """

    graph1: BipartiteGraph
    graph3: BipartiteGraph | None
    texts: list[str]
    text_matrix: torch.Tensor
    g1_rows: torch.Tensor
    g3_rows: torch.Tensor | None
    sequences: list[np.ndarray]

    def __post_init__(self):
        self.idx1 = GraphIndex(self.graph1)
        self.idx3 = GraphIndex(self.graph3) if self.graph3 is not None else None
        self.edges1 = self.graph1.edges
        self.edges3 = self.graph3.edges if self.graph3 is not None else np.empty((0, 2), np.int64)

    @property
    def has_sequences(self) -> bool:
        return len(self.sequences) > 0

    @property
    def has_reviews(self) -> bool:
        return len(self.edges3) > 0

    @classmethod
    def build(
        cls,
        graph1: BipartiteGraph,
        graph3: BipartiteGraph | None,
        sequences: Mapping[str, Sequence[str]],
        encoder: TextEncoder,
        max_seq_len: int = 100,
        dtype: torch.dtype = torch.float32,
    ) -> "PretrainData":
        rows: dict[str, int] = {}

        def row(text: str) -> int:
            if text not in rows:
                rows[text] = len(rows)
            return rows[text]

        item_texts = {iid: item_text(graph1.neighbors_of_left(iid)) for iid in graph1.left_ids}
        g1 = [row(item_texts[i]) for i in graph1.left_ids] + [row(a) for a in graph1.right_ids]
        g3 = None
        if graph3 is not None:
            missing = [i for i in graph3.left_ids if i not in item_texts]
            if missing:
                raise ValueError(f"review-graph items absent from the attribute graph: {missing[:5]}")
            g3 = [row(item_texts[i]) for i in graph3.left_ids] + [row(t) for t in graph3.right_ids]
        texts = list(rows)
        mat = np.stack([encoder.encode(t) for t in texts])
        seqs = []
        for user in sorted(sequences):
            idx = [graph1.left_index[i] for i in sequences[user] if i in graph1.left_index][-max_seq_len:]
            if len(idx) >= 2:
                seqs.append(np.asarray(idx, dtype=np.int64))
        return cls(graph1, graph3, texts, torch.as_tensor(mat, dtype=dtype),
                   torch.as_tensor(g1), None if g3 is None else torch.as_tensor(g3), seqs)


@dataclass
class BatchPlan:
    """Index-level description of one batch (what to embed, not the embeddings)."""

    e1: np.ndarray
    seqs: list[np.ndarray]
    masks: list[np.ndarray]
    e3: np.ndarray


def make_step_batch(data: PretrainData, batch_size: int, seqs_per_step: int, p_mask: float,
                    rng: np.random.Generator) -> BatchPlan:
    """Uniformly sample item-attribute edges, masked user sequences and item-term edges."""
    n1 = len(data.edges1)
    e1 = rng.choice(n1, size=min(batch_size, n1), replace=False)
    seqs, masks = [], []
    if data.has_sequences:
        picks = rng.choice(len(data.sequences), size=min(seqs_per_step, len(data.sequences)),
                           replace=False)
        for k in picks:
            seqs.append(data.sequences[k])
            masks.append(draw_mask(len(data.sequences[k]), p_mask, rng))
    n3 = len(data.edges3)
    e3 = rng.choice(n3, size=min(batch_size, n3), replace=False) if n3 else np.empty(0, np.int64)
    return BatchPlan(e1, seqs, masks, e3)


def eval_plans(data: PretrainData, batch_size: int, p_mask: float, seed: int) -> list[BatchPlan]:
    """A fixed partition of all training data into batch-size chunks."""
    rng = np.random.default_rng([seed, 0xE7A1])
    n_batches = max(1, math.ceil(len(data.edges1) / batch_size))
    e1 = np.array_split(rng.permutation(len(data.edges1)), n_batches)
    order = rng.permutation(len(data.sequences))
    masks = [draw_mask(len(s), p_mask, rng) for s in data.sequences]
    s_chunks = np.array_split(order, n_batches)
    e3 = np.array_split(rng.permutation(len(data.edges3)), n_batches)
    return [BatchPlan(e1[b], [data.sequences[k] for k in s_chunks[b]], [masks[k] for k in s_chunks[b]],
                      e3[b]) for b in range(n_batches)]


def encode_graphs(model: PretrainModel, data: PretrainData, normalize: bool = True):
    z = model.interpreter(data.text_matrix)
    h1 = model.gnn1(z[data.g1_rows], data.idx1, normalize)
    h3 = model.gnn3(z[data.g3_rows], data.idx3, normalize) if data.has_reviews else None
    return h1, h3


def embed_batch(model: PretrainModel, data: PretrainData, plan: BatchPlan, encoded=None,
                normalize: bool = True, stop_grad_targets: bool = False) -> TaskBatch:
    h1, h3 = encoded if encoded is not None else encode_graphs(model, data, normalize)
    n_left = data.graph1.n_left
    batch = TaskBatch()
    if len(plan.e1):
        e = data.edges1[plan.e1]
        batch.t1_item = h1[e[:, 0]]
        batch.t1_attr = h1[n_left + e[:, 1]]
        batch.t1_items = h1[np.unique(e[:, 0])]
        batch.t1_attrs = h1[n_left + np.unique(e[:, 1])]
    if plan.seqs:
        B, L = len(plan.seqs), max(len(s) for s in plan.seqs)
        idx = np.zeros((B, L), dtype=np.int64)
        mask = np.zeros((B, L), dtype=bool)
        pad = np.ones((B, L), dtype=bool)
        for b, (s, m) in enumerate(zip(plan.seqs, plan.masks)):
            idx[b, :len(s)], mask[b, :len(s)], pad[b, :len(s)] = s, m, False
        idx_t, mask_t = torch.from_numpy(idx), torch.from_numpy(mask)
        h2 = model.seq(h1[idx_t], mask_t, torch.from_numpy(pad), normalize)
        target_idx = idx_t[mask_t]
        target = h1[target_idx]
        batch.t2_pred = h2[mask_t]
        batch.t2_target = target.detach() if stop_grad_targets else target
        batch.t2_items = h1[np.unique(idx[~pad])]
        batch.t2_candidates = h1[:n_left]
        batch.t2_target_index = target_idx
    if len(plan.e3) and h3 is not None:
        n3 = data.graph3.n_left
        e = data.edges3[plan.e3]
        batch.t3_item = h3[e[:, 0]]
        batch.t3_term = h3[n3 + e[:, 1]]
        batch.t3_items = h3[np.unique(e[:, 0])]
        batch.t3_terms = h3[n3 + np.unique(e[:, 1])]
    return batch


def batch_losses(model: PretrainModel, data: PretrainData, plan: BatchPlan, config: TrainConfig,
                 encoded=None):
    """``(L1, L2, L3)`` of one plan under ``config.loss_mode``."""
    unified = config.loss_mode == "unified"
    batch = embed_batch(model, data, plan, encoded, normalize=unified,
                        stop_grad_targets=config.stop_grad_targets)
    if unified:
        return task_losses(batch, config.lam)
    return task_losses_infonce_ce(batch, config.lam, config.infonce_tau)


def task_weights(data: PretrainData, config: TrainConfig) -> list[float]:
    return active_weights(config.w, (len(data.edges1) > 0, data.has_sequences, data.has_reviews))


def weighted(losses, weights) -> torch.Tensor:
    return sum(w * L for w, L in zip(weights, losses) if w > 0)


@torch.no_grad()
def full_loss(model: PretrainModel, data: PretrainData, config: TrainConfig,
              plans: list[BatchPlan] | None = None) -> tuple[float, list[float]]:
    """Objective averaged over a fixed partition of all data: ``(total, [L1, L2, L3])``."""
    plans = plans if plans is not None else eval_plans(data, config.batch_size, config.p_mask, config.seed)
    encoded = encode_graphs(model, data, normalize=config.loss_mode == "unified")
    weights = task_weights(data, config)
    parts = np.zeros(3)
    counts = np.zeros(3)
    for plan in plans:
        ls = batch_losses(model, data, plan, config, encoded)
        for k, (L, present) in enumerate(zip(ls, (len(plan.e1), len(plan.seqs), len(plan.e3)))):
            if present:
                parts[k] += float(L)
                counts[k] += 1
    means = [float(p / c) if c else 0.0 for p, c in zip(parts, counts)]
    return float(sum(w * m for w, m in zip(weights, means))), means


# --------------------------------------------------------------------------
# optimisation state


class Adam:
    """Adaptive-moment gradient descent with explicit, checkpointable state."""

    def __init__(self, params: Sequence[torch.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0

    @torch.no_grad()
    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(self.lr * (m / c1) / ((v / c2).sqrt() + self.eps))


@dataclass
class TrainState:
    model: PretrainModel
    opt: Adam
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0
    best_loss: float = math.inf
    epochs_since_best: int = 0
    best_params: dict[str, torch.Tensor] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    train_config: TrainConfig | None = None

    @classmethod
    def fresh(cls, model_config: ModelConfig, config: TrainConfig) -> "TrainState":
        model = PretrainModel.initialized(model_config, seed=config.seed)
        opt = Adam(model.parameters(), config.lr, config.adam_betas, config.adam_eps)
        return cls(model, opt, np.random.default_rng([config.seed, 0xBA7C]), train_config=config)


@dataclass
class TrainResult:
    model: PretrainModel
    state: TrainState
    history: list[dict]
    stopped: str


def _snapshot(model: PretrainModel) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _finite(x: float) -> bool:
    return math.isfinite(x)


def train(
    data: PretrainData,
    config: TrainConfig,
    model_config: ModelConfig = ModelConfig(),
    *,
    resume: TrainState | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    stop_after_epochs: int | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minimise the weighted task objective with early stopping on the full-data loss.

    One epoch is ``ceil(|item-attribute edges| / batch_size)`` steps. The
    returned model carries the parameters of the best epoch. On a non-finite
    loss a :class:`NonFiniteLossError` is raised carrying the partial result.
    ``stop_after_epochs`` interrupts the run (for resume tests) without
    counting as convergence.
    """
    state = resume or TrainState.fresh(model_config, config)
    model = state.model
    weights = task_weights(data, config)
    patience = config.effective_patience(data.has_sequences)
    plans = eval_plans(data, config.batch_size, config.p_mask, config.seed)
    steps_per_epoch = max(1, math.ceil(len(data.edges1) / config.batch_size))
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def emit(rec: dict) -> None:
        if log_fh:
            log_fh.write(json.dumps(rec) + "\n")

    def result(stopped: str) -> TrainResult:
        best = copy.deepcopy(model)
        if state.best_params:
            best.load_state_dict(state.best_params)
        return TrainResult(best, state, state.history, stopped)

    def fail(msg: str) -> None:
        if log_fh:
            log_fh.close()
        tail = state.history[-3:]
        raise NonFiniteLossError(f"{msg}; last epochs: {tail}", result("non-finite"))

    try:
        if not state.history:
            total, parts = full_loss(model, data, config, plans)
            rec = {"kind": "epoch", "epoch": 0, "step": 0, "L1": parts[0], "L2": parts[1],
                   "L3": parts[2], "total": total}
            state.history.append(rec)
            emit(rec)
            if not _finite(total):
                fail("non-finite initial loss")
            state.best_loss, state.best_params = total, _snapshot(model)

        run_epochs = 0
        while state.epoch < config.max_epochs:
            if state.epochs_since_best > patience:
                return result("early-stopped")
            if stop_after_epochs is not None and run_epochs >= stop_after_epochs:
                return result("interrupted")
            state.epoch += 1
            run_epochs += 1
            model.train()
            for _ in range(steps_per_epoch):
                plan = make_step_batch(data, config.batch_size, config.effective_seqs_per_step,
                                       config.p_mask, state.rng)
                ls = batch_losses(model, data, plan, config)
                loss = weighted(ls, weights)
                state.step += 1
                lv = float(loss.detach())
                l1, l2, l3 = (float(L.detach()) for L in ls)
                emit({"kind": "step", "epoch": state.epoch, "step": state.step,
                      "L1": l1, "L2": l2, "L3": l3, "total": lv})
                if not _finite(lv):
                    fail(f"non-finite mini-batch loss at step {state.step}")
                model.zero_grad(set_to_none=True)
                loss.backward()
                state.opt.step()

            total, parts = full_loss(model, data, config, plans)
            rec = {"kind": "epoch", "epoch": state.epoch, "step": state.step, "L1": parts[0],
                   "L2": parts[1], "L3": parts[2], "total": total}
            state.history.append(rec)
            emit(rec)
            if on_epoch:
                on_epoch(rec)
            if not _finite(total):
                fail(f"non-finite epoch loss at epoch {state.epoch}")
            if total < state.best_loss:
                state.best_loss, state.best_params = total, _snapshot(model)
                state.epochs_since_best = 0
            else:
                state.epochs_since_best += 1
            if checkpoint_path is not None:
                save_checkpoint(state, checkpoint_path)
        return result("max-epochs" if state.epochs_since_best <= patience else "early-stopped")
    finally:
        if log_fh and not log_fh.closed:
            log_fh.close()


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"SCSGCKPT"
CHECKPOINT_VERSION = 1


def _tensors_of(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    out = []
    names = [n for n, _ in state.model.named_parameters()]
    for n, p in state.model.named_parameters():
        out.append(("param/" + n, p.detach()))
    for n in names:
        if n in state.best_params:
            out.append(("best/" + n, state.best_params[n]))
    for n, m, v in zip(names, state.opt.m, state.opt.v):
        out.append(("adam_m/" + n, m))
        out.append(("adam_v/" + n, v))
    return out


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Versioned binary: magic, u32 version, u32 header length, JSON header, f32 LE tensors.

    Written to a temporary file and renamed into place.
    """
    tensors = _tensors_of(state)
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": dataclasses.asdict(state.model.cfg),
        "train_config": dataclasses.asdict(state.train_config) if state.train_config else None,
        "step": state.step,
        "epoch": state.epoch,
        "best_loss": state.best_loss,
        "epochs_since_best": state.epochs_since_best,
        "adam_t": state.opt.t,
        "rng": state.rng.bit_generator.state,
        "history": state.history,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hdr)))
        fh.write(hdr)
        for _, t in tensors:
            fh.write(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    os.replace(tmp, path)


def _restore(seq_type):
    if isinstance(seq_type, list):
        return tuple(seq_type)
    return seq_type


def load_checkpoint(path: str | Path, model_config: ModelConfig | None = None) -> TrainState:
    """Inverse of :func:`save_checkpoint`. With ``model_config`` given, every
    tensor shape is validated against it."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
    off = len(MAGIC) + 8
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen

    stored_cfg = ModelConfig(**header["model_config"])
    cfg = model_config or stored_cfg
    model = PretrainModel(cfg)
    expected = {n: tuple(p.shape) for n, p in model.named_parameters()}
    tensors: dict[str, torch.Tensor] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        name = spec["name"]
        block = name.split("/", 1)[1]
        if block not in expected:
            raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
        if shape != expected[block]:
            raise CheckpointError(f"shape mismatch for tensor {name!r}: checkpoint {shape}, "
                                  f"config expects {expected[block]}")
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if off != len(raw):
        raise CheckpointError("trailing bytes in checkpoint")

    with torch.no_grad():
        for n, p in model.named_parameters():
            p.copy_(tensors["param/" + n])
    tc = header["train_config"]
    train_config = None
    if tc is not None:
        train_config = TrainConfig(**{k: _restore(v) for k, v in tc.items()})
    opt = Adam(model.parameters(), train_config.lr if train_config else 0.005,
               train_config.adam_betas if train_config else (0.9, 0.999),
               train_config.adam_eps if train_config else 1e-8)
    names = [n for n, _ in model.named_parameters()]
    opt.m = [tensors["adam_m/" + n].clone() for n in names]
    opt.v = [tensors["adam_v/" + n].clone() for n in names]
    opt.t = header["adam_t"]
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    best = {n: tensors["best/" + n].clone() for n in names if "best/" + n in tensors}
    return TrainState(model, opt, rng, header["step"], header["epoch"], header["best_loss"],
                      header["epochs_since_best"], best, header["history"], train_config)


def best_model(state: TrainState) -> PretrainModel:
    """The best-epoch parameters of a training state as a standalone model."""
    model = copy.deepcopy(state.model)
    if state.best_params:
        model.load_state_dict(state.best_params)
    return model
