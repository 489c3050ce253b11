import json
import struct

import numpy as np
import pytest
import torch

from helpers import SMALL, tiny_data
from scsgraph.config import TrainConfig
from scsgraph.graphs import build_graph
from scsgraph.model import ModelConfig, PretrainModel
from scsgraph.trainer import (MAGIC, CheckpointError, NonFiniteLossError, PretrainData, TrainState,
                              batch_losses, embed_batch, full_loss, load_checkpoint, make_step_batch,
                              save_checkpoint, task_weights, train)


def f32_data(**kw):
    return tiny_data(dtype=torch.float32, **kw)


def small_model():
    return PretrainModel.initialized(SMALL, seed=0)


def quick(**kw):
    base = dict(batch_size=8, max_epochs=4, lr=0.01)
    return TrainConfig(**(base | kw))


def plans_equal(a, b):
    return (np.array_equal(a.e1, b.e1) and np.array_equal(a.e3, b.e3)
            and all(np.array_equal(x, y) for x, y in zip(a.seqs, b.seqs))
            and all(np.array_equal(x, y) for x, y in zip(a.masks, b.masks)))


class TestBatches:
    def test_same_seed_same_batch(self):
        data = f32_data()
        a = make_step_batch(data, 8, 2, 0.2, np.random.default_rng(9))
        b = make_step_batch(data, 8, 2, 0.2, np.random.default_rng(9))
        assert plans_equal(a, b)

    def test_sizes(self):
        data = f32_data()
        plan = make_step_batch(data, 8, 2, 0.2, np.random.default_rng(0))
        assert len(plan.e1) == 8 and len(plan.seqs) == 2 and len(plan.e3) == 8
        assert all(m.any() for m in plan.masks)

    def test_default_batch_size(self):
        assert TrainConfig().batch_size == 512 and TrainConfig().effective_seqs_per_step == 128

    def test_empty_review_graph(self):
        data = f32_data(reviews=False)
        cfg = quick()
        assert task_weights(data, cfg) == pytest.approx([0.75, 0.25, 0.0])
        plan = make_step_batch(data, 8, 2, 0.2, np.random.default_rng(0))
        assert len(plan.e3) == 0
        L1, L2, L3 = batch_losses(small_model(), data, plan, cfg)
        assert float(L3.detach()) == 0.0

    def test_batch_rows_unit_norm(self):
        data = f32_data()
        plan = make_step_batch(data, 8, 2, 0.2, np.random.default_rng(0))
        b = embed_batch(small_model(), data, plan)
        for rows in (b.t1_item, b.t1_attrs, b.t2_pred, b.t2_target, b.t3_term):
            assert torch.allclose(rows.norm(dim=1), torch.ones(len(rows)), atol=1e-5)


class TestTraining:
    def test_single_pair_collapses(self):
        # one item with one attribute whose input features differ; uniformity has
        # a single row per side, so only the alignment term drives the update
        graph = build_graph({"i": ["a"]})
        mat = torch.from_numpy(np.random.default_rng(0).normal(size=(2, SMALL.d_text))).float()
        data = PretrainData(graph, None, ["item", "a"], mat, torch.tensor([0, 1]), None, [])
        cfg = TrainConfig(batch_size=1, lam=1e-12, max_epochs=300, patience=300, lr=0.01)
        res = train(data, cfg, SMALL)
        first, last = res.history[0]["L1"], min(h["L1"] for h in res.history)
        assert first > 0.1 and last < 1e-3

    def test_patience_stops_on_plateau(self):
        data = f32_data()
        cfg = quick(lr=1e-30, max_epochs=500, patience=50)
        res = train(data, cfg, SMALL)
        assert res.stopped == "early-stopped"
        best = min(range(len(res.history)), key=lambda k: res.history[k]["total"])
        assert res.history[-1]["epoch"] - res.history[best]["epoch"] <= 51

    def test_patience_defaults(self):
        assert TrainConfig().effective_patience(True) == 200
        assert TrainConfig().effective_patience(False) == 50

    def test_loss_drops(self):
        res = train(f32_data(), quick(max_epochs=30), SMALL)
        totals = [h["total"] for h in res.history]
        assert all(np.isfinite(totals)) and min(totals[-5:]) < totals[0]

    def test_returns_best_params(self):
        data = f32_data()
        cfg = quick(max_epochs=15, lr=0.05)
        res = train(data, cfg, SMALL)
        total, _ = full_loss(res.model, data, cfg)
        assert total == pytest.approx(min(h["total"] for h in res.history), abs=1e-5)

    def test_two_runs_identical(self):
        a = train(f32_data(), quick(), SMALL)
        b = train(f32_data(), quick(), SMALL)
        assert a.history == b.history
        assert all(torch.equal(p, q) for p, q in zip(a.model.parameters(), b.model.parameters()))

    def test_non_finite_aborts_cleanly(self):
        data = f32_data()
        data.text_matrix[0, 0] = float("nan")
        with pytest.raises(NonFiniteLossError) as err:
            train(data, quick(), SMALL)
        assert err.value.result.stopped == "non-finite"

    def test_log_records(self, tmp_path):
        log = tmp_path / "log.jsonl"
        train(f32_data(), quick(max_epochs=2), SMALL, log_path=log)
        recs = [json.loads(l) for l in log.read_text().splitlines()]
        assert {r["kind"] for r in recs} == {"step", "epoch"}
        assert all({"step", "epoch", "L1", "L2", "L3", "total"} <= set(r) for r in recs)
        steps_per_epoch = -(-len(f32_data().edges1) // 8)
        assert sum(r["kind"] == "step" for r in recs) == 2 * steps_per_epoch

    def test_infonce_mode_trains(self):
        res = train(f32_data(), quick(loss_mode="infonce-ce", max_epochs=5), SMALL)
        assert all(np.isfinite(h["total"]) and h["total"] > 0 for h in res.history)


class TestCheckpoint:
    def trained_state(self, _tmp_path=None):
        res = train(f32_data(), quick(max_epochs=2), SMALL)
        return res.state

    def test_save_load_save_bytes(self, tmp_path):
        state = self.trained_state(tmp_path)
        save_checkpoint(state, tmp_path / "a.bin")
        save_checkpoint(load_checkpoint(tmp_path / "a.bin"), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_round_trip_state(self, tmp_path):
        state = self.trained_state(tmp_path)
        save_checkpoint(state, tmp_path / "a.bin")
        back = load_checkpoint(tmp_path / "a.bin", SMALL)
        assert all(torch.equal(p, q) for p, q in zip(state.model.parameters(), back.model.parameters()))
        assert back.rng.bit_generator.state == state.rng.bit_generator.state
        assert (back.step, back.epoch, back.best_loss, back.opt.t) == (state.step, state.epoch,
                                                                       state.best_loss, state.opt.t)

    def test_wrong_dimension_names_tensor(self, tmp_path):
        save_checkpoint(self.trained_state(tmp_path), tmp_path / "a.bin")
        with pytest.raises(CheckpointError, match="interpreter.fc2.weight"):
            load_checkpoint(tmp_path / "a.bin", ModelConfig(d_text=32, d_hidden=16, d=10, max_seq_len=12))

    def test_version_mismatch(self, tmp_path):
        save_checkpoint(self.trained_state(tmp_path), tmp_path / "a.bin")
        raw = bytearray((tmp_path / "a.bin").read_bytes())
        struct.pack_into("<I", raw, len(MAGIC), 99)
        (tmp_path / "b.bin").write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(tmp_path / "b.bin")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"hello world")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x.bin")

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = quick(max_epochs=6)
        full = train(f32_data(), cfg, SMALL)
        part = train(f32_data(), cfg, SMALL, stop_after_epochs=3)
        assert part.stopped == "interrupted"
        save_checkpoint(part.state, tmp_path / "mid.bin")
        resumed = train(f32_data(), cfg, SMALL, resume=load_checkpoint(tmp_path / "mid.bin"))
        assert resumed.history == full.history
        assert all(torch.equal(p, q) for p, q in zip(full.state.model.parameters(),
                                                     resumed.state.model.parameters()))

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        save_checkpoint(self.trained_state(tmp_path), tmp_path / "a.bin")
        assert [p.name for p in tmp_path.iterdir()] == ["a.bin"]
