"""End-to-end acceptance checks. Each test logs one PASS/FAIL line.

Criteria 5-8 share the synthetic training runs of a module fixture (five
seeds with default settings, plus one comparison-mode run), which takes
roughly half an hour on a single CPU core.
"""

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
import torch

from helpers import SMALL, central_diff_check, record, tiny_data
from scsgraph import pipeline as P
from scsgraph.cli import SYNTHETIC_CONFIG, Layout, build_parser, main, resolve_config
from scsgraph.config import TrainConfig, config_from_dict, load_config
from scsgraph.corpus import audit_split
from scsgraph.graphs import build_graph
from scsgraph.inference import embed_items, embed_with_scs
from scsgraph.losses import alignment, objective_floor, uniformity
from scsgraph.metrics import ndcg_at_k, random_ndcg_expectation, recall_at_k
from scsgraph.model import ModelConfig, PretrainModel
from scsgraph.synthetic import SyntheticSpec, generate_corpus, write_corpus
from scsgraph.text_encoder import HashingEncoder
from scsgraph.trainer import NonFiniteLossError, batch_losses, eval_plans, task_weights, weighted

SEEDS = range(5)


# --------------------------------------------------------------------------
# 1. metric oracle


def recall_reference(ranked, relevant, k):
    hits = 0
    for pos, item in enumerate(ranked):
        if pos < k and item in relevant:
            hits += 1
    return hits / len(relevant)


def ndcg_reference(ranked, relevant, k):
    def dcg(flags):
        return sum(f / math.log2(pos + 2) for pos, f in enumerate(flags[:k]))
    actual = [1 if item in relevant else 0 for item in ranked]
    ideal = [1] * len(relevant) + [0] * k
    return dcg(actual) / dcg(ideal)


def test_criterion_1_metric_oracle():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        universe = [f"x{i}" for i in range(n + int(rng.integers(0, 10)))]
        ranked = [universe[i] for i in rng.permutation(len(universe))[:n]]
        relevant = set(rng.choice(universe, size=int(rng.integers(1, len(universe) + 1)), replace=False))
        k = int(rng.choice([1, 5, 20, 40]))
        worst = max(worst, abs(recall_at_k(ranked, relevant, k) - recall_reference(ranked, relevant, k)),
                    abs(ndcg_at_k(ranked, relevant, k) - ndcg_reference(ranked, relevant, k)))
    elapsed = time.perf_counter() - t0
    ok = record(1, worst <= 1e-9 and elapsed < 10, f"max abs diff {worst:.2e} over 1000 cases, {elapsed:.2f}s")
    assert ok


# --------------------------------------------------------------------------
# 2. gradients


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(20):
        data = tiny_data(seed=draw)
        model = PretrainModel.initialized(SMALL, seed=100 + draw, dtype=torch.float64)
        cfg = TrainConfig(batch_size=16, seed=draw)
        plan = eval_plans(data, cfg.batch_size, cfg.p_mask, draw)[0]
        weights = task_weights(data, cfg)
        blocks = dict(model.named_parameters())
        objectives = [lambda k=k: batch_losses(model, data, plan, cfg)[k] for k in range(3)]
        objectives.append(lambda: weighted(batch_losses(model, data, plan, cfg), weights))
        for fn in objectives:
            errs = central_diff_check(fn, blocks, coords_per_block=3, seed=draw)
            worst = max(worst, max(errs.values()))
    elapsed = time.perf_counter() - t0
    ok = record(2, worst < 1e-4 and elapsed < 120,
                f"max relative error {worst:.2e} over 20 draws x 4 objectives x all blocks, {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------
# 3. loss geometry


def test_criterion_3_loss_geometry():
    rng = np.random.default_rng(0)
    min_align, max_unif = math.inf, -math.inf
    for _ in range(10_000):
        n, d = int(rng.integers(2, 17)), int(rng.integers(2, 17))
        x = rng.normal(size=(2, n, d))
        x /= np.linalg.norm(x, axis=2, keepdims=True)
        a, b = torch.from_numpy(x[0]), torch.from_numpy(x[1])
        min_align = min(min_align, float(alignment(a, b)))
        max_unif = max(max_unif, float(uniformity(a)))
    e1, e2 = torch.tensor([[1.0, 0.0]], dtype=torch.float64), torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    spots = [
        (float(alignment(e1, e2)), 2.0), (float(uniformity(torch.cat([e1, e2]))), -2.0),
        (float(alignment(e1, -e1)), 4.0), (float(uniformity(torch.cat([e1, -e1]))), -4.0),
    ]
    spot_err = max(abs(got - want) for got, want in spots)
    ok = record(3, min_align >= 0 and max_unif <= 0 and spot_err <= 1e-9,
                f"min alignment {min_align:.3e}, max uniformity {max_unif:.3e}, closed-form error {spot_err:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 4. insertion invariance


def test_criterion_4_insertion_invariance():
    rng = np.random.default_rng(0)
    attrs = [f"attribute {k}" for k in range(200)]
    base = {f"item{k:03d}": list(rng.choice(attrs, size=int(rng.integers(2, 9)), replace=False))
            for k in range(500)}
    pool = attrs + [f"novel {k}" for k in range(30)]
    scs = {f"scs{k:02d}": list(rng.choice(pool, size=int(rng.integers(1, 9)), replace=False)) for k in range(50)}
    graph = build_graph(base)
    model = PretrainModel.initialized(ModelConfig(), seed=0)
    enc = HashingEncoder(256)
    before = embed_items(graph, model, enc)
    _, after = embed_with_scs(graph, scs, model, enc)
    diff = max(float(np.abs(before[i] - after[i]).max()) for i in graph.left_ids)
    ok = record(4, diff <= 1e-6 and all(s in after for s in scs),
                f"max change of an existing item's embedding {diff:.2e} after inserting 50 items")
    assert ok


# --------------------------------------------------------------------------
# synthetic runs shared by criteria 5-8


@dataclass
class Run:
    seed: int
    cfg: object
    prep: object
    graph1: object
    data: object
    encoder: object
    random_ndcg: float
    untrained_ndcg: float
    trained_ndcg: float | None
    history: list
    model: object
    seconds: float
    aborted: str | None = None


def synthetic_config(directory: Path, seed: int, loss_mode: str = "unified"):
    ip, xp = write_corpus(generate_corpus(SyntheticSpec(seed=seed)), directory)
    return config_from_dict(SYNTHETIC_CONFIG | {
        "paths": {"items": str(ip), "interactions": str(xp)},
        "train": {"seed": seed, "loss_mode": loss_mode},
    })


def synthetic_run(directory: Path, seed: int, loss_mode: str = "unified") -> Run:
    cfg = synthetic_config(directory, seed, loss_mode)
    prep = P.preprocess(cfg)
    graph1, graph3, seqs = P.build_graphs(prep, cfg)
    enc = P.encoder_for(cfg)
    data = P.pretrain_data(graph1, graph3, seqs, enc, cfg)
    rel = P.test_relevance(prep)
    n_test = len(prep.split.test_items)
    users = [u for u in rel if u in P.user_histories(prep)]
    rnd = float(np.mean([random_ndcg_expectation(n_test, len(rel[u]), 5) for u in users]))
    untrained, _ = P.evaluate(P.untrained_model(cfg), prep, graph1, enc)
    t0 = time.perf_counter()
    aborted = None
    try:
        res = P.pretrain(data, cfg)
        model, history = res.model, res.history
    except NonFiniteLossError as e:
        model, history, aborted = e.result.model, e.result.history, str(e)
    seconds = time.perf_counter() - t0
    trained = None
    if aborted is None:
        trained = P.evaluate(model, prep, graph1, enc)[0].values["NDCG@5"]
    return Run(seed, cfg, prep, graph1, data, enc, rnd, untrained.values["NDCG@5"], trained, history, model,
               seconds, aborted)


@pytest.fixture(scope="module")
def unified_runs(tmp_path_factory):
    return [synthetic_run(tmp_path_factory.mktemp(f"syn{s}"), s) for s in SEEDS]


@pytest.fixture(scope="module")
def infonce_run(tmp_path_factory):
    return synthetic_run(tmp_path_factory.mktemp("infonce"), 0, "infonce-ce")


@pytest.mark.slow
def test_criterion_5_synthetic_lift(unified_runs):
    held_out = [len(r.prep.split.test_items) for r in unified_runs]
    trained = float(np.mean([r.trained_ndcg for r in unified_runs]))
    random = float(np.mean([r.random_ndcg for r in unified_runs]))
    untrained = float(np.mean([r.untrained_ndcg for r in unified_runs]))
    slowest = max(r.seconds for r in unified_runs)
    per_seed = ", ".join(f"s{r.seed}={r.trained_ndcg:.3f}/{r.untrained_ndcg:.3f}" for r in unified_runs)
    ok = (all(h == 30 for h in held_out) and trained >= 2 * random and trained >= 1.5 * untrained
          and slowest <= 600)
    record(5, ok, f"NDCG@5 trained {trained:.4f} vs random {random:.4f} (x{trained / random:.2f}) and "
                  f"untrained {untrained:.4f} (x{trained / untrained:.2f}); slowest training {slowest:.0f}s; "
                  f"trained/untrained per seed: {per_seed}")
    assert ok


def spread_ratio(history, floor):
    totals = [h["total"] - floor for h in history]
    return max(totals) / min(totals)


@pytest.mark.slow
def test_criterion_6_loss_stability(unified_runs, infonce_run):
    uni = unified_runs[0]
    totals = [h["total"] for h in uni.history]
    finite = all(math.isfinite(t) for t in totals)
    w = task_weights(uni.data, uni.cfg.train)
    uni_ratio = spread_ratio(uni.history, objective_floor("unified", w, uni.cfg.train.lam))
    alt = [h["total"] for h in infonce_run.history]
    alt_finite = [t for t in alt if math.isfinite(t)]
    if infonce_run.aborted or len(alt_finite) < len(alt):
        alt_ratio = math.inf
    else:
        alt_ratio = spread_ratio(infonce_run.history, objective_floor("infonce-ce", w, uni.cfg.train.lam))
    ok = finite and totals[-1] < totals[0] and uni_ratio < alt_ratio
    record(6, ok, f"unified {totals[0]:.4f} -> {totals[-1]:.4f}, spread ratio {uni_ratio:.3f}; "
                  f"infonce-ce range [{min(alt_finite):.4f}, {max(alt_finite):.4f}] over {len(alt)} epochs"
                  f"{' (aborted: non-finite)' if infonce_run.aborted else ''}, spread ratio {alt_ratio:.3f}")
    assert ok


@pytest.mark.slow
def test_criterion_7_correlation(unified_runs):
    run = unified_runs[0]
    results = P.analyze(run.model, run.prep, run.graph1, run.encoder, run.cfg)
    ok = len(results) == 3 and all(r.r > 0 and r.significant for r in results)
    record(7, ok, "; ".join(f"{r.pair_filter}: r={r.r:.4f} p={r.p_value:.4f} n={r.n_pairs}" for r in results))
    assert ok


def leakage_scan(prep) -> dict[str, int]:
    inters, s = prep.interactions, prep.split
    heldout = set(s.val_items) | set(s.test_items)
    train_users = {inters[r].user_id for r in s.train}
    return {
        "train rows on held-out items": sum(inters[r].item_id in heldout for r in s.train),
        "held-out rows from unseen users": sum(inters[r].user_id not in train_users for r in s.val + s.test),
    }


@pytest.mark.slow
def test_criterion_8_leakage(unified_runs, tmp_path):
    assert main(["demo", str(tmp_path / "demo")]) == 0
    splits = {"demo": P.preprocess(load_config(tmp_path / "demo" / "config.json"))}
    splits |= {f"synthetic seed {r.seed}": r.prep for r in unified_runs}
    bad = {}
    for name, prep in splits.items():
        counts = leakage_scan(prep)
        audit = audit_split(prep.split, prep.interactions)
        if any(counts.values()) or any(audit.values()):
            bad[name] = counts | audit
    ok = not bad
    record(8, ok, f"{len(splits)} splits scanned, violations: {bad or 'none'}")
    assert ok


# --------------------------------------------------------------------------
# 9. determinism


def test_criterion_9_determinism(tmp_path):
    assert main(["demo", str(tmp_path / "demo")]) == 0
    cfg_path = str(tmp_path / "demo" / "config.json")
    outputs = []
    for rep in ("a", "b"):
        workdir = str(tmp_path / f"work_{rep}")
        assert main(["run", "--config", cfg_path, "--workdir", workdir, "--log-every", "1000"]) == 0
        layout = Layout(resolve_config(build_parser().parse_args(
            ["evaluate", "--config", cfg_path, "--workdir", workdir])))
        outputs.append({
            "checkpoint": (layout.dir("pretrain") / "checkpoint.bin").read_bytes(),
            "report.json": (layout.dir("evaluate") / "report.json").read_bytes(),
            "report.txt": (layout.dir("evaluate") / "report.txt").read_bytes(),
        })
    same = [k for k in outputs[0] if outputs[0][k] == outputs[1][k]]
    ok = len(same) == 3
    record(9, ok, f"identical across two seeded runs: {same} "
                  f"(checkpoint {len(outputs[0]['checkpoint'])} bytes, "
                  f"NDCG@5 {json.loads(outputs[0]['report.json'])['values']['NDCG@5']:.4f})")
    assert ok
