"""Tag-similarity tables, co-location checks and a small SVG bar chart."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from cityfm.corpus import Corpus, Kind
from cityfm.geometry import ContextGroup
from cityfm.neural.checkpoint import ModelCheckpoint
from cityfm.neural.encoders import text_encode_batch

TagSet = Mapping[str, str]


def tag_label(tags: TagSet) -> str:
    return ", ".join(f"{k}: {v}" for k, v in sorted(tags.items()))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def encode_tag_sets(checkpoint: ModelCheckpoint, tag_sets: Sequence[TagSet]) -> np.ndarray:
    seqs = [checkpoint.vocab.encode_tags(t) for t in tag_sets]
    return text_encode_batch(checkpoint.params, seqs)


def cosine_table(checkpoint: ModelCheckpoint, query: TagSet, candidates: Sequence[TagSet],
                 k: int | None = None) -> list[tuple[dict, float]]:
    """Candidates ranked by cosine to ``query``; the query itself is the first row."""
    others = [dict(c) for c in candidates if dict(c) != dict(query)]
    vecs = encode_tag_sets(checkpoint, [query, *others])
    q = vecs[0]
    ranked = sorted(((c, cosine(q, v)) for c, v in zip(others, vecs[1:])), key=lambda t: (-t[1], tag_label(t[0])))
    if k is not None:
        ranked = ranked[: max(k - 1, 0)]
    return [(dict(query), cosine(q, q)), *ranked]


def table_csv(rows: Sequence[tuple[dict, float]], query: TagSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query", "candidate", "cosine"])
    for tags, value in rows:
        w.writerow([tag_label(query), tag_label(tags), f"{value:.6f}"])
    return buf.getvalue()


def bar_chart_svg(rows: Sequence[tuple[str, float]], title: str = "") -> str:
    """Horizontal bars for values in [-1, 1], zero axis in the middle of the plot area."""
    label_w, plot_w, bar_h, gap, top = 260, 320, 18, 6, 34
    height = top + len(rows) * (bar_h + gap) + 10
    width = label_w + plot_w + 70
    zero = label_w + plot_w / 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<text x="10" y="20" font-size="14">{escape(title)}</text>',
        f'<line x1="{zero:.1f}" y1="{top - 4}" x2="{zero:.1f}" y2="{height - 6}" stroke="#444"/>',
    ]
    for i, (label, value) in enumerate(rows):
        y = top + i * (bar_h + gap)
        v = float(np.clip(value, -1.0, 1.0))
        length = abs(v) * plot_w / 2
        x = zero if v >= 0 else zero - length
        colour = "#3b7dd8" if v >= 0 else "#d8643b"
        parts.append(f'<text x="{label_w - 8}" y="{y + bar_h - 5}" text-anchor="end">{escape(label)}</text>')
        parts.append(f'<rect x="{x:.1f}" y="{y}" width="{length:.1f}" height="{bar_h}" fill="{colour}"/>')
        parts.append(f'<text x="{label_w + plot_w + 8}" y="{y + bar_h - 5}">{value:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ----------------------------------------------------------------- co-location


def category_of(tags: TagSet, categories: set[str]) -> str | None:
    for k, v in sorted(tags.items()):
        if f"{k}={v}" in categories:
            return f"{k}={v}"
    return None


def colocation_sets(corpus: Corpus, groups: Sequence[ContextGroup], categories: set[str]) -> dict[str, set[str]]:
    """For each category, the other categories sharing at least one context group with it."""
    out: dict[str, set[str]] = {c: set() for c in categories}
    for g in groups:
        present = {category_of(corpus[m].tags, categories) for m in g.member_ids} - {None}
        for a, b in itertools.permutations(present, 2):
            out[a].add(b)
    return out


@dataclass(frozen=True)
class ColocationResult:
    query: str
    satisfied: bool
    worst_colocated: float | None
    best_never: float | None


def _tags_of(category: str) -> dict[str, str]:
    k, v = category.split("=", 1)
    return {k: v}


def colocation_ranking(checkpoint: ModelCheckpoint, corpus: Corpus, groups: Sequence[ContextGroup],
                       categories: Sequence[str]) -> list[ColocationResult]:
    """Does every co-located category outrank every never-co-located one in the query's cosine table?"""
    cats = sorted(set(categories))
    together = colocation_sets(corpus, groups, set(cats))
    results = []
    for q in cats:
        if not together[q]:
            continue
        table = cosine_table(checkpoint, _tags_of(q), [_tags_of(c) for c in cats])
        score = {f"{k}={v}": s for tags, s in table[1:] for k, v in tags.items()}
        near = [score[c] for c in together[q]]
        never = [score[c] for c in cats if c != q and c not in together[q]]
        worst = min(near)
        best = max(never) if never else None
        results.append(ColocationResult(q, best is None or worst > best, worst, best))
    return results


def same_context_gap(checkpoint: ModelCheckpoint, corpus: Corpus, groups: Sequence[ContextGroup],
                     n_random: int = 5000, seed: int = 0) -> tuple[float, float]:
    """Mean text cosine of same-group entity pairs and of uniformly random entity pairs."""
    members = sorted({m for g in groups for m in g.member_ids})
    if len(members) < 2:
        raise ValueError("need at least two grouped entities")
    vecs = encode_tag_sets(checkpoint, [corpus[m].tags for m in members])
    unit = vecs / np.maximum(np.linalg.norm(vecs, axis=1, keepdims=True), 1e-300)
    row = {m: i for i, m in enumerate(members)}
    same = []
    for g in groups:
        idx = [row[m] for m in g.member_ids]
        for a, b in itertools.combinations(idx, 2):
            same.append(unit[a] @ unit[b])
    rng = np.random.default_rng(seed)
    a = rng.integers(0, len(members), n_random)
    b = rng.integers(0, len(members) - 1, n_random)
    b = np.where(b >= a, b + 1, b)
    rand = np.einsum("ij,ij->i", unit[a], unit[b])
    return float(np.mean(same)) if same else float("nan"), float(np.mean(rand))


def poi_categories(corpus: Corpus, keys: Sequence[str] = ("amenity", "shop", "leisure", "craft", "tourism",
                                                         "healthcare", "office", "man_made")) -> list[str]:
    cats = set()
    for e in corpus.of_kind(Kind.NODE):
        for k in keys:
            if k in e.tags:
                cats.add(f"{k}={e.tags[k]}")
    return sorted(cats)
