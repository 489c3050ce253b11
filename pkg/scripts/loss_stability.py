"""Epoch-loss trajectories of the unified and InfoNCE+CE objectives on one synthetic corpus.

Spread is reported as max/min of the epoch loss after subtracting each
objective's lower bound, so both modes are measured on a nonnegative scale.

    python scripts/loss_stability.py --seed 0 --out stability.json
"""

import argparse
import json
import math
import tempfile
from pathlib import Path

import torch

from scsgraph import pipeline as P
from scsgraph.cli import SYNTHETIC_CONFIG
from scsgraph.config import config_from_dict
from scsgraph.losses import objective_floor
from scsgraph.synthetic import SyntheticSpec, generate_corpus, write_corpus
from scsgraph.trainer import NonFiniteLossError, task_weights


def trajectory(seed: int, mode: str, directory: Path, max_epochs: int | None) -> dict:
    ip, xp = write_corpus(generate_corpus(SyntheticSpec(seed=seed)), directory)
    train = {"seed": seed, "loss_mode": mode} | ({"max_epochs": max_epochs} if max_epochs else {})
    cfg = config_from_dict(SYNTHETIC_CONFIG | {"paths": {"items": str(ip), "interactions": str(xp)},
                                               "train": train})
    prep = P.preprocess(cfg)
    data = P.pretrain_data(*P.build_graphs(prep, cfg), P.encoder_for(cfg), cfg)
    aborted = None
    try:
        history = P.pretrain(data, cfg).history
    except NonFiniteLossError as e:
        history, aborted = e.result.history, str(e)
    floor = objective_floor(mode, task_weights(data, cfg.train), cfg.train.lam)
    totals = [h["total"] for h in history]
    finite = [t - floor for t in totals if math.isfinite(t)]
    ratio = max(finite) / min(finite) if len(finite) == len(totals) and min(finite) > 0 else math.inf
    return {"mode": mode, "epochs": len(totals) - 1, "initial": totals[0], "final": totals[-1],
            "min": min(totals), "max": max(totals), "floor": floor, "spread_ratio": ratio,
            "aborted": aborted, "totals": totals}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-epochs", type=int)
    ap.add_argument("--out")
    args = ap.parse_args()
    torch.set_num_threads(1)
    out = []
    with tempfile.TemporaryDirectory() as tmp:
        for mode in ("unified", "infonce-ce"):
            r = trajectory(args.seed, mode, Path(tmp) / mode, args.max_epochs)
            out.append(r)
            print(f"{mode:<11s} {r['initial']:.4f} -> {r['final']:.4f} over {r['epochs']} epochs; "
                  f"range [{r['min']:.4f}, {r['max']:.4f}], spread ratio {r['spread_ratio']:.3f}"
                  f"{'; aborted' if r['aborted'] else ''}", flush=True)
    if args.out:
        Path(args.out).write_text(json.dumps(out) + "\n")


if __name__ == "__main__":
    main()
