"""Relation-derived transportation link weights and similar-road sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cityfm.corpus import Corpus, Kind


@dataclass(frozen=True)
class LinkWeightTable:
    """Raw and normalized link weights of every way; ``road_ids`` marks the road polylines."""

    counts: dict[int, int]
    weights: dict[int, float]
    road_ids: tuple[int, ...] = ()

    @property
    def has_relations(self) -> bool:
        return any(self.counts.values())


def link_weights(corpus: Corpus) -> LinkWeightTable:
    """Number of relations holding each road as a member, normalized by the max over all ways."""
    way_counts = {e.id: 0 for e in corpus.entities.values() if e.kind is Kind.WAY}
    for rel in corpus.of_kind(Kind.RELATION):
        for member in {m for m, _ in rel.members}:
            if member in way_counts:
                way_counts[member] += 1
    top = max(way_counts.values(), default=0)
    counts = dict(sorted(way_counts.items()))
    weights = {w: (c / top if top else 0.0) for w, c in counts.items()}
    return LinkWeightTable(counts, weights, tuple(sorted(e.id for e in corpus.roads())))


def similar_roads(table: LinkWeightTable, theta: float = 0.05) -> dict[int, frozenset[int]]:
    """Roads whose normalized weights differ by less than ``theta`` (self excluded)."""
    ids = np.array(sorted(table.road_ids or table.weights), dtype=np.int64)
    w = np.array([table.weights[i] for i in ids])
    out = {}
    for k, i in enumerate(ids):
        close = np.abs(w - w[k]) < theta
        close[k] = False
        out[int(i)] = frozenset(int(j) for j in ids[close])
    return out
