"""Deterministic desk-scale corpus of restaurant-review sentences.

Template-generated JSONL rows with `text` plus `attributes` (name, food,
price, rating, area) so that content-control tasks have labels. Run as a
module to write train/validation files:

    python -m sdlm.toydata --out data/ --train 200 --valid 50 --seed 0
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

NAMES = ("mill", "phoenix", "eagle", "ranch", "cricketers", "wrestlers",
         "punter", "vaults", "clowns", "taste")
FOODS = ("japanese", "chinese", "french", "indian", "italian", "english",
         "mexican", "thai")
PRICES = ("cheap", "moderate", "expensive", "affordable")
RATINGS = ("one", "three", "five")
AREAS = ("riverside", "city centre")

TEMPLATES = (
    ("the {name} is a {price} {food} restaurant in the {area} .",
     ("name", "price", "food", "area")),
    ("{name} serves {food} food with a {rating} star rating .",
     ("name", "food", "rating")),
    ("there is a {price} {food} place called {name} near the {area} .",
     ("price", "food", "name", "area")),
    ("the {food} restaurant {name} has {rating} stars and {price} prices .",
     ("food", "name", "rating", "price")),
    ("{name} is a family friendly {food} restaurant .",
     ("name", "food")),
    ("customers love the {price} {food} dishes at {name} .",
     ("price", "food", "name")),
)

_POOLS = {
    "name": NAMES,
    "food": FOODS,
    "price": PRICES,
    "rating": RATINGS,
    "area": AREAS,
}


def generate(n: int, seed: int = 0) -> list[dict]:
    """n JSONL-ready rows, deterministic in (n, seed)."""
    rng = random.Random(seed)
    rows = []
    for _ in range(n):
        template, fields = TEMPLATES[rng.randrange(len(TEMPLATES))]
        attrs = {f: rng.choice(_POOLS[f]) for f in fields}
        rows.append({"text": template.format(**attrs), "attributes": attrs})
    return rows


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--train", type=int, default=200)
    parser.add_argument("--valid", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    out = Path(args.out)
    write_jsonl(out / "train.jsonl", generate(args.train, seed=args.seed))
    write_jsonl(out / "valid.jsonl", generate(args.valid, seed=args.seed + 1))
    print(f"wrote {args.train} train and {args.valid} validation rows to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
