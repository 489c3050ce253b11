"""Command-line driver: preprocess, build-graphs, pretrain, infer, evaluate, analyze.

Every stage writes into ``<workdir>/<stage>-<key>/`` where ``key`` hashes the
upstream key, the config sections the stage depends on and the bytes of its
input files. Changing any of them yields a fresh directory, so stale
intermediate files are never picked up. Each stage directory holds a
``manifest.json`` echoing the resolved flags and config.

Exit codes: 0 success, 1 user or config error, 2 internal failure (including
a non-finite training loss).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import torch

from . import __version__
from . import pipeline as P
from .config import LOSS_MODES, ConfigError, PipelineConfig, config_from_dict, load_config
from .corpus import DEFAULT_FIELD_MAP, CorpusError, SplitDataset, audit_split, load_corpus
from .graphs import load_graph, save_graph
from .inference import recommend_all
from .model import PretrainModel
from .trainer import CheckpointError, NonFiniteLossError, best_model, load_checkpoint, save_checkpoint

log = logging.getLogger("scsgraph")

STAGES = ("preprocess", "build-graphs", "pretrain", "infer", "evaluate", "analyze")


class UserError(Exception):
    """Bad input from the command line or config; exit code 1."""


# --------------------------------------------------------------------------
# hashing and layout


def _file_digest(path: str | None) -> str | None:
    if not path:
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _section(cfg: PipelineConfig, name: str) -> Any:
    return dataclasses.asdict(getattr(cfg, name)) if name != "schema" else dict(cfg.schema)


def _encoder_path(cfg: PipelineConfig) -> str | None:
    return cfg.encoder.split(":", 1)[1] if cfg.encoder.startswith("precomputed:") else None


def stage_keys(cfg: PipelineConfig) -> dict[str, str]:
    """Content keys of every stage, each chained on its upstream key."""
    p = cfg.paths
    prep = _key({"stage": "preprocess", "items": _file_digest(p.items),
                 "interactions": _file_digest(p.interactions),
                 "lexicon": [_file_digest(p.positive_lexicon), _file_digest(p.negative_lexicon)],
                 "schema": _section(cfg, "schema"), "extraction": _section(cfg, "extraction"),
                 "split": _section(cfg, "split")})
    graphs = _key({"stage": "build-graphs", "up": prep, "seed": cfg.train.seed,
                   "reviews_per_item": cfg.extraction.reviews_per_item,
                   "max_seq_len": cfg.split.max_seq_len})
    pretrain = _key({"stage": "pretrain", "up": graphs, "model": _section(cfg, "model"),
                     "train": _section(cfg, "train"), "encoder": cfg.encoder,
                     "encoder_file": _file_digest(_encoder_path(cfg))})
    ev = _section(cfg, "eval")
    return {
        "preprocess": prep,
        "build-graphs": graphs,
        "pretrain": pretrain,
        "infer": _key({"stage": "infer", "up": pretrain, "eval": ev}),
        "evaluate": _key({"stage": "evaluate", "up": pretrain, "eval": ev}),
        "analyze": _key({"stage": "analyze", "up": pretrain, "eval": ev}),
    }


class Layout:
    def __init__(self, cfg: PipelineConfig, checkpoint: str | None = None, untrained: bool = False):
        self.cfg = cfg
        self.root = Path(cfg.paths.workdir)
        self.keys = stage_keys(cfg)
        # an external or untrained model changes what downstream stages compute
        if checkpoint or untrained:
            tag = {"checkpoint": _file_digest(checkpoint), "untrained": untrained}
            for s in ("infer", "evaluate", "analyze"):
                self.keys[s] = _key({"up": self.keys[s], **tag})

    def dir(self, stage: str) -> Path:
        return self.root / f"{stage.replace('-', '_')}-{self.keys[stage]}"

    def require(self, stage: str, marker: str) -> Path:
        d = self.dir(stage)
        if not (d / marker).exists():
            raise UserError(f"missing {stage} output {d / marker}; run `scsgraph {stage}` first "
                            f"with the same config")
        return d


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_jsonl(path: Path, rows) -> None:
    _write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


def _start_stage(layout: Layout, stage: str, args: argparse.Namespace) -> Path:
    d = layout.dir(stage)
    d.mkdir(parents=True, exist_ok=True)
    _write_json(d / "manifest.json", {
        "command": stage,
        "version": __version__,
        "key": layout.keys[stage],
        "keys": layout.keys,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "config": layout.cfg.to_dict(),
    })
    return d


# --------------------------------------------------------------------------
# config resolution


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, seed=args.seed))
    if args.loss_mode is not None:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, loss_mode=args.loss_mode))
    if args.workdir is not None:
        cfg = cfg.replace(paths=dataclasses.replace(cfg.paths, workdir=args.workdir))
    if args.encoder is not None:
        cfg = cfg.replace(encoder=args.encoder)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    """Check every referenced path and the schema before any work is done."""
    p = cfg.paths
    for name in ("items", "interactions"):
        value = getattr(p, name)
        if not value:
            raise ConfigError(f"paths.{name} is not set")
        if not Path(value).is_file():
            raise ConfigError(f"paths.{name}: no such file {value}")
    if bool(p.positive_lexicon) != bool(p.negative_lexicon):
        raise ConfigError("set both paths.positive_lexicon and paths.negative_lexicon, or neither")
    for name in ("positive_lexicon", "negative_lexicon"):
        value = getattr(p, name)
        if value and not Path(value).is_file():
            raise ConfigError(f"paths.{name}: no such file {value}")
    unknown = set(cfg.schema) - set(DEFAULT_FIELD_MAP)
    if unknown:
        raise ConfigError(f"schema maps unknown fields {sorted(unknown)}; "
                          f"known: {sorted(DEFAULT_FIELD_MAP)}")
    if cfg.encoder != "hash":
        path = _encoder_path(cfg)
        if path is None:
            raise ConfigError(f"encoder must be 'hash' or 'precomputed:<path>', got {cfg.encoder!r}")
        if not Path(path).is_file():
            raise ConfigError(f"precomputed encoder file not found: {path}")
        P.encoder_for(cfg)
    P.lexicon_for(cfg)  # parses the lexicon files and rejects overlapping word lists


# --------------------------------------------------------------------------
# stage persistence


def _load_prepared(layout: Layout) -> P.Prepared:
    d = layout.require("preprocess", "split.json")
    cfg = layout.cfg
    items, inters, report = load_corpus(cfg.paths.items, cfg.paths.interactions, cfg.schema)
    split = SplitDataset.from_json(json.loads((d / "split.json").read_text(encoding="utf-8"))["split"])
    attributes = {r["item_id"]: r["attributes"] for r in _read_jsonl(d / "attributes.jsonl")}
    review_terms = {r["item_id"]: r["reviews"] for r in _read_jsonl(d / "review_terms.jsonl")}
    kept = [t for t in (d / "kept_terms.txt").read_text(encoding="utf-8").splitlines() if t]
    return P.Prepared(items, inters, attributes, split, review_terms, kept, report)


def _load_graphs(layout: Layout):
    d = layout.require("build-graphs", "sequences.json")
    graph1 = load_graph(d / "item_attribute")
    graph3 = load_graph(d / "item_review") if (d / "item_review").exists() else None
    sequences = json.loads((d / "sequences.json").read_text(encoding="utf-8"))
    return graph1, graph3, sequences


def _load_model(layout: Layout, args: argparse.Namespace) -> PretrainModel:
    if getattr(args, "untrained", False):
        return P.untrained_model(layout.cfg)
    path = args.checkpoint or layout.require("pretrain", "checkpoint.bin") / "checkpoint.bin"
    if not Path(path).is_file():
        raise UserError(f"checkpoint not found: {path}")
    return best_model(load_checkpoint(path, layout.cfg.model))


# --------------------------------------------------------------------------
# commands


def cmd_preprocess(args, cfg: PipelineConfig) -> int:
    layout = Layout(cfg)
    prep = P.preprocess(cfg)
    d = _start_stage(layout, "preprocess", args)
    counts = prep.split.stage_counts
    _write_json(d / "split.json", {"split": prep.split.to_json(),
                                   "load_report": dataclasses.asdict(prep.load_report),
                                   "audit": audit_split(prep.split, prep.interactions)})
    _write_jsonl(d / "attributes.jsonl", ({"item_id": i, "attributes": a}
                                          for i, a in sorted(prep.attributes.items())))
    _write_jsonl(d / "review_terms.jsonl", ({"item_id": i, "reviews": r}
                                            for i, r in sorted(prep.review_terms.items())))
    _write_text(d / "kept_terms.txt", "".join(t + "\n" for t in prep.kept_terms))
    r = prep.load_report
    print(f"loaded {r.n_items} items, {r.n_interactions} interactions "
          f"(malformed {r.malformed_items}/{r.malformed_interactions}, duplicates {r.duplicate_interactions})")
    for stage, c in counts.items():
        print(f"  {stage:<22s} " + " ".join(f"{k}={v}" for k, v in c.items()))
    s = prep.split
    print(f"split: train {len(s.train_items)} items/{len(s.train)} rows, val {len(s.val_items)}/{len(s.val)}, "
          f"test {len(s.test_items)}/{len(s.test)}; review terms kept {len(prep.kept_terms)}")
    print(f"-> {d}")
    return 0


def cmd_build_graphs(args, cfg: PipelineConfig) -> int:
    layout = Layout(cfg)
    prep = _load_prepared(layout)
    graph1, graph3, sequences = P.build_graphs(prep, cfg)
    d = _start_stage(layout, "build-graphs", args)
    save_graph(graph1, d / "item_attribute")
    if (d / "item_review").exists():
        shutil.rmtree(d / "item_review")
    if graph3 is not None:
        save_graph(graph3, d / "item_review")
    _write_json(d / "sequences.json", sequences)
    print(f"item-attribute graph: {graph1.n_left} items, {graph1.n_right} attributes, {graph1.n_edges} edges")
    if graph3 is None:
        print("item-review graph: none (review task disabled)")
    else:
        print(f"item-review graph: {graph3.n_left} items, {graph3.n_right} terms, {graph3.n_edges} edges")
    print(f"purchase sequences: {len(sequences)} users\n-> {d}")
    return 0


def cmd_pretrain(args, cfg: PipelineConfig) -> int:
    layout = Layout(cfg)
    graph1, graph3, sequences = _load_graphs(layout)
    data = P.pretrain_data(graph1, graph3, sequences, P.encoder_for(cfg), cfg)
    d = layout.dir("pretrain")
    ckpt, log_path = d / "checkpoint.bin", d / "train_log.jsonl"
    resume = None
    if args.resume and ckpt.exists():
        resume = load_checkpoint(ckpt, cfg.model)
        print(f"resuming from epoch {resume.epoch}")
    else:
        d.mkdir(parents=True, exist_ok=True)
        for stale in (ckpt, log_path):
            stale.unlink(missing_ok=True)
    _start_stage(layout, "pretrain", args)

    def progress(rec: dict) -> None:
        if rec["epoch"] % args.log_every == 0:
            print(f"epoch {rec['epoch']:4d} loss {rec['total']:.6f} "
                  f"(L1 {rec['L1']:.4f} L2 {rec['L2']:.4f} L3 {rec['L3']:.4f})", flush=True)

    try:
        result = P.pretrain(data, cfg, resume=resume, checkpoint_path=ckpt, log_path=log_path,
                            on_epoch=progress)
    except NonFiniteLossError as e:
        save_checkpoint(e.result.state, ckpt)
        tail = log_path.read_text(encoding="utf-8").splitlines()[-5:] if log_path.exists() else []
        print(f"error: {e}", file=sys.stderr)
        print("last log lines:\n" + "\n".join(tail), file=sys.stderr)
        return 2
    save_checkpoint(result.state, ckpt)
    _write_json(d / "history.json", result.history)
    best = min(result.history, key=lambda r: r["total"])
    print(f"{result.stopped} after {result.state.epoch} epochs; best epoch {best['epoch']} "
          f"loss {best['total']:.6f}\n-> {ckpt}")
    return 0


def _scs_setup(layout: Layout, args):
    prep = _load_prepared(layout)
    graph1, _, _ = _load_graphs(layout)
    model = _load_model(layout, args)
    return prep, graph1, model, P.encoder_for(layout.cfg)


def cmd_infer(args, cfg: PipelineConfig) -> int:
    layout = Layout(cfg, args.checkpoint, args.untrained)
    prep, graph1, model, enc = _scs_setup(layout, args)
    _, table = P.scs_embeddings(model, prep, graph1, enc)
    hist = P.user_histories(prep)
    candidates = table.subset(prep.split.test_items)
    k = args.k or max(cfg.eval.ns)
    recs = recommend_all(hist, table, candidates, k)
    d = _start_stage(layout, "infer", args)
    _write_jsonl(d / "recommendations.jsonl", (r.to_json() for r in recs))
    _write_jsonl(d / "scs_embeddings.jsonl",
                 ({"item_id": i, "vector": table.vectors[table.index(i)].tolist()}
                  for i in prep.split.test_items))
    print(f"{len(recs)} users x top-{k} over {len(candidates)} SCS items\n-> {d}")
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    layout = Layout(cfg, args.checkpoint, args.untrained)
    prep, graph1, model, enc = _scs_setup(layout, args)
    report, recs = P.evaluate(model, prep, graph1, enc, cfg.eval.ns)
    d = _start_stage(layout, "evaluate", args)
    _write_json(d / "report.json", report.to_json())
    _write_text(d / "report.txt", report.format_table())
    _write_jsonl(d / "recommendations.jsonl", (r.to_json() for r in recs))
    print(report.format_table() + f"-> {d}")
    return 0


def cmd_analyze(args, cfg: PipelineConfig) -> int:
    layout = Layout(cfg, args.checkpoint, args.untrained)
    prep, graph1, model, enc = _scs_setup(layout, args)
    results = P.analyze(model, prep, graph1, enc, cfg)
    d = _start_stage(layout, "analyze", args)
    _write_json(d / "correlation.json", [r.to_json() for r in results])
    lines = [f"{'pairs':<14s} {'n':>7s} {'r':>8s} {'p':>9s}  significant@{cfg.eval.significance}"]
    lines += [f"{r.pair_filter:<14s} {r.n_pairs:7d} {r.r:8.4f} {r.p_value:9.5f}  {r.significant}"
              for r in results]
    _write_text(d / "correlation.txt", "\n".join(lines) + "\n")
    print("\n".join(lines) + f"\n-> {d}")
    return 0


def cmd_run(args, cfg: PipelineConfig) -> int:
    for fn in (cmd_preprocess, cmd_build_graphs, cmd_pretrain, cmd_evaluate, cmd_analyze):
        code = fn(args, cfg)
        if code:
            return code
    return 0


def cmd_demo(args) -> int:
    """Copy the bundled demo corpus and config into a directory."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = resources.files("scsgraph") / "data" / "demo"
    for name in ("items.jsonl", "interactions.jsonl", "config.json"):
        (out / name).write_bytes((src / name).read_bytes())
    print(f"demo corpus written to {out}; try: scsgraph run --config {out / 'config.json'}")
    return 0


def cmd_synth(args) -> int:
    """Write a synthetic cluster-structured corpus plus a matching config."""
    from .synthetic import SyntheticSpec, generate_corpus, write_corpus

    out = Path(args.out)
    items, inters = write_corpus(generate_corpus(SyntheticSpec(seed=args.synth_seed)), out)
    _write_json(out / "config.json", SYNTHETIC_CONFIG | {
        "paths": {"items": items.name, "interactions": inters.name, "workdir": "work"}})
    print(f"synthetic corpus written to {out}")
    return 0


SYNTHETIC_CONFIG: dict[str, Any] = {
    "extraction": {"short_fields": ["tags"], "long_fields": []},
    "split": {"min_user_inter": 5, "min_item_inter": 1},
}


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scsgraph", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--seed", type=int, help="override train.seed")
    common.add_argument("--workdir", help="override paths.workdir")
    common.add_argument("--loss-mode", choices=LOSS_MODES, help="override train.loss_mode")
    common.add_argument("--encoder", help="'hash' or 'precomputed:<path to JSONL>'")

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--checkpoint", help="checkpoint to use instead of the pretrain stage output")
    model_opts.add_argument("--untrained", action="store_true",
                            help="use freshly initialised parameters (baseline)")

    commands: dict[str, tuple[Callable, list, str]] = {
        "preprocess": (cmd_preprocess, [common], "clean, extract attributes and review terms, split"),
        "build-graphs": (cmd_build_graphs, [common], "build the item-attribute and item-review graphs"),
        "pretrain": (cmd_pretrain, [common], "multi-task pre-training"),
        "infer": (cmd_infer, [common, model_opts], "embed SCS items and write top-k recommendations"),
        "evaluate": (cmd_evaluate, [common, model_opts], "Recall/NDCG over the SCS test items"),
        "analyze": (cmd_analyze, [common, model_opts], "embedding/attribute correlation report"),
        "run": (cmd_run, [common], "all stages in order"),
    }
    for name, (fn, parents, help_) in commands.items():
        p = sub.add_parser(name, parents=parents, help=help_)
        p.set_defaults(func=fn, needs_config=True, checkpoint=None, untrained=False)
        if name in ("pretrain", "run"):
            p.add_argument("--resume", action="store_true", help="continue from the stage checkpoint")
            p.add_argument("--log-every", type=int, default=10, help="print every n-th epoch")
        if name == "infer":
            p.add_argument("-k", type=int, default=None, help="list length (default: largest eval N)")

    p = sub.add_parser("demo", help="copy the bundled demo corpus and config")
    p.add_argument("out")
    p.set_defaults(func=cmd_demo, needs_config=False)
    p = sub.add_parser("synth", help="write a synthetic cluster-structured corpus and config")
    p.add_argument("out")
    p.add_argument("--synth-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth, needs_config=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)  # keeps float reductions, and hence checkpoints, reproducible
    try:
        if not args.needs_config:
            return args.func(args)
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (UserError, ConfigError, CorpusError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - report, do not traceback
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
