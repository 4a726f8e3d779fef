"""Print tag-similarity tables for a few query categories of a trained checkpoint.

    python3 scripts/similarity_table.py runs/benchmark/checkpoint.npz runs/benchmark/city
"""

from __future__ import annotations

import sys
from pathlib import Path

from cityfm.cli import load_corpus
from cityfm.downstream.analysis import cosine_table, poi_categories, tag_label
from cityfm.neural.checkpoint import ModelCheckpoint

QUERIES = ({"amenity": "hospital"}, {"amenity": "cafe"}, {"amenity": "fuel"}, {"context": "none"})


def main(argv: list[str]) -> None:
    if len(argv) != 2:
        sys.exit(__doc__)
    ckpt = ModelCheckpoint.load(argv[0])
    cats = [dict([c.split("=", 1)]) for c in poi_categories(load_corpus(Path(argv[1])))]
    for q in QUERIES:
        rows = cosine_table(ckpt, q, cats + [{"building": "residential"}, {"context": "none"}])
        print(f"\n{tag_label(q)}")
        for tags, value in rows[:6] + [({"...": ""}, float("nan"))] + rows[-3:]:
            print(f"  {tag_label(tags):34s} {value:6.2f}")


if __name__ == "__main__":
    main(sys.argv[1:])
