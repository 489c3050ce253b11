"""Regenerate the small bundled demo corpus (src/scsgraph/data/demo/).

Four product departments with templated titles, descriptions and reviews.
Output is deterministic for a given --seed.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

DEPARTMENTS = {
    "Kitchen": {
        "products": ["ceramic mug", "cast iron skillet", "chef knife", "cutting board", "tea kettle",
                     "mixing bowl", "pepper grinder", "salad spinner"],
        "features": ["nonstick coating", "wooden handle", "glass lid", "dishwasher safe finish",
                     "stainless steel body", "silicone grip"],
        "uses": ["weeknight dinners", "morning coffee", "holiday baking", "meal prep"],
        "parts": ["handle", "lid", "blade", "coating", "base"],
        "sub": ["Cookware", "Cutlery", "Drinkware"],
    },
    "Garden": {
        "products": ["watering can", "pruning shears", "raised planter", "garden hose", "compost bin",
                     "seed starter tray", "hand trowel", "bird feeder"],
        "features": ["rust resistant blade", "recycled plastic frame", "brass nozzle", "drainage holes",
                     "ergonomic grip", "weatherproof coating"],
        "uses": ["vegetable beds", "patio containers", "spring planting", "flower borders"],
        "parts": ["nozzle", "blade", "spring", "frame", "lid"],
        "sub": ["Planters", "Tools", "Watering"],
    },
    "Camping": {
        "products": ["dome tent", "sleeping bag", "camp stove", "headlamp", "trekking poles",
                     "insulated bottle", "folding chair", "rain tarp"],
        "features": ["aluminum poles", "waterproof shell", "carry sack", "adjustable strap",
                     "rechargeable battery", "mesh pocket"],
        "uses": ["weekend trips", "backcountry hikes", "music festivals", "car camping"],
        "parts": ["zipper", "strap", "battery", "seam", "buckle"],
        "sub": ["Shelter", "Lighting", "Hydration"],
    },
    "Office": {
        "products": ["desk lamp", "fountain pen", "paper organizer", "monitor stand", "spiral notebook",
                     "label maker", "stapler", "ergonomic mouse"],
        "features": ["dimmable light", "refillable cartridge", "bamboo shelf", "cable slot",
                     "acid free paper", "wireless receiver"],
        "uses": ["home offices", "study sessions", "small businesses", "school supplies"],
        "parts": ["switch", "nib", "hinge", "cable", "cover"],
        "sub": ["Desk Accessories", "Writing", "Paper"],
    },
}
BRANDS = ["Northfield", "Larkspur", "Brightwell", "Oakhaven", "Tidewater", "Pinecrest"]
ADJ = ["compact", "durable", "lightweight", "classic", "modern", "heavy"]
POS = ["great", "sturdy", "excellent", "reliable", "perfect", "comfortable"]
NEG = ["flimsy", "cheap", "broken", "awkward", "loose", "disappointing"]


def generate(seed: int = 7, items_per_dept: int = 30, n_users: int = 80):
    rng = np.random.default_rng(seed)
    items, by_dept, parts_of = [], {d: [] for d in DEPARTMENTS}, {}
    k = 0
    for dept, vocab in DEPARTMENTS.items():
        for _ in range(items_per_dept):
            k += 1
            iid = f"D{k:03d}"
            product = str(rng.choice(vocab["products"]))
            feats = [str(f) for f in rng.choice(vocab["features"], size=2, replace=False)]
            use = str(rng.choice(vocab["uses"]))
            brand = str(rng.choice(BRANDS))
            adj = str(rng.choice(ADJ))
            items.append({
                "item_id": iid,
                "title": f"{brand} {adj} {product}",
                "brand": brand,
                "categories": ["Home", dept, str(rng.choice(vocab["sub"]))],
                "description": f"A {adj} {product} with {feats[0]} and {feats[1]}. "
                               f"Ideal for {use}.",
            })
            by_dept[dept].append(iid)
            parts_of[iid] = vocab["parts"]
    depts = list(DEPARTMENTS)
    interactions = []
    for u in range(n_users):
        uid = f"U{u:03d}"
        mine = [str(d) for d in rng.choice(depts, size=int(rng.integers(1, 3)), replace=False)]
        pool = [i for d in mine for i in by_dept[d]]
        chosen = rng.choice(pool, size=min(len(pool), int(rng.integers(8, 15))), replace=False)
        ts = np.sort(rng.integers(1_500_000_000, 1_600_000_000, size=len(chosen)))
        for t, iid in zip(ts, chosen):
            part = str(rng.choice(parts_of[str(iid)]))
            good = rng.random() < 0.7
            word = str(rng.choice(POS if good else NEG))
            extra = " Shipping was fast." if rng.random() < 0.5 else ""
            interactions.append({"user_id": uid, "item_id": str(iid), "timestamp": int(t),
                                 "review": f"The {part} is {word}.{extra}"})
    return items, interactions


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/scsgraph/data/demo"))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items, inters = generate(args.seed)
    (out / "items.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in items))
    (out / "interactions.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in inters))
    config = {
        "paths": {"items": "items.jsonl", "interactions": "interactions.jsonl", "workdir": "work"},
        "split": {"min_user_inter": 3, "min_item_inter": 3, "min_attrs": 5},
        "extraction": {"term_min_items": 2},
        "train": {"max_epochs": 30, "batch_size": 128},
    }
    (out / "config.json").write_text(json.dumps(config, indent=1, sort_keys=True) + "\n")
    print(f"{len(items)} items, {len(inters)} interactions -> {out}")


if __name__ == "__main__":
    main()
