"""Task tables and the three probe evaluations."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely.wkt

from cityfm.corpus import EMPTY_NODE_TAGS, Corpus
from cityfm.geometry import representative_point
from cityfm.neural.checkpoint import ModelCheckpoint

from .embed import Embedder
from .probes import MetricReport, ProbeError, run_probe

log = logging.getLogger(__name__)

MIN_MEASUREMENTS = 10


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class SpeedRow:
    segment_id: int
    speed_mph: float
    n_measurements: int | None = None


@dataclass(frozen=True)
class LabelRow:
    way_id: int
    label: str


@dataclass(frozen=True)
class DensityRow:
    region_id: int
    ring: tuple[tuple[float, float], ...]  # closed (lat, lon) ring
    density_kppl: float


def _read_rows(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or ())]
        if missing:
            raise TableError(f"{path}: missing columns {missing}")
        return list(reader)


def _num(row: dict, key: str, cast, line: int):
    try:
        return cast(row[key])
    except (TypeError, ValueError) as exc:
        raise TableError(f"line {line}: bad {key} value {row[key]!r}") from exc


def read_speeds(path: str | Path) -> list[SpeedRow]:
    rows = _read_rows(path, ("segment_id", "speed_mph"))
    out = []
    for n, r in enumerate(rows, start=2):
        count = _num(r, "n_measurements", int, n) if r.get("n_measurements") not in (None, "") else None
        out.append(SpeedRow(_num(r, "segment_id", int, n), _num(r, "speed_mph", float, n), count))
    return out


def read_labels(path: str | Path) -> list[LabelRow]:
    rows = _read_rows(path, ("way_id", "class"))
    return [LabelRow(_num(r, "way_id", int, n), r["class"]) for n, r in enumerate(rows, start=2)]


def parse_region_wkt(text: str) -> tuple[tuple[float, float], ...]:
    """Exterior ring of a WKT polygon (x = lon, y = lat) as closed (lat, lon) pairs."""
    try:
        geom = shapely.wkt.loads(text)
    except Exception as exc:  # shapely raises its own WKTReadingError subclasses
        raise TableError(f"unreadable WKT polygon: {text[:60]!r}") from exc
    if geom.geom_type != "Polygon":
        raise TableError(f"expected a POLYGON, got {geom.geom_type}")
    return tuple((float(y), float(x)) for x, y in geom.exterior.coords)


def read_density(path: str | Path) -> list[DensityRow]:
    rows = _read_rows(path, ("region_id", "wkt_polygon", "density_kppl"))
    return [DensityRow(_num(r, "region_id", int, n), parse_region_wkt(r["wkt_polygon"]),
                       _num(r, "density_kppl", float, n)) for n, r in enumerate(rows, start=2)]


# ------------------------------------------------------------------ features


def road_features(emb: Embedder, ids) -> np.ndarray:
    """[tag text (empty node when untagged) | context + road offset | location] per road."""
    ents = [emb.corpus[i] for i in ids]
    text = emb.text_for_tags([e.tags or EMPTY_NODE_TAGS for e in ents])
    ctx = np.array([emb.road(i) for i in ids]).reshape(len(ids), emb.dim)
    loc = emb.location([representative_point(emb.corpus, e) for e in ents])
    return np.hstack([text, ctx, loc])


def building_features(emb: Embedder, ids) -> np.ndarray:
    """[visual | context text of the nearest road | location] per polygon."""
    ents = [emb.corpus[i] for i in ids]
    vis = emb.visual(ids)
    ctx = np.array([emb.building_context(i) for i in ids]).reshape(len(ids), emb.dim)
    loc = emb.location([representative_point(emb.corpus, e) for e in ents])
    return np.hstack([vis, ctx, loc])


def region_features(emb: Embedder, rings) -> np.ndarray:
    return np.array([emb.region(r).vector for r in rings])


# ----------------------------------------------------------------- evaluations


def _shuffled(y: np.ndarray, seed: int) -> np.ndarray:
    return y[np.random.default_rng(seed + 10_000).permutation(len(y))]


def eval_speed(checkpoint: ModelCheckpoint, corpus: Corpus, speeds: list[SpeedRow], *, n_runs: int = 10,
               seed: int = 0, embedder: Embedder | None = None) -> MetricReport:
    emb = embedder or Embedder(checkpoint, corpus)
    road_ids = {e.id for e in corpus.roads()}
    kept = [r for r in speeds if r.n_measurements is None or r.n_measurements >= MIN_MEASUREMENTS]
    unknown = [r.segment_id for r in kept if r.segment_id not in road_ids]
    if unknown:
        log.warning("%d speed rows reference unknown road ids; skipped", len(unknown))
    kept = [r for r in kept if r.segment_id in road_ids]
    x = road_features(emb, [r.segment_id for r in kept])
    y = np.array([r.speed_mph for r in kept])
    report = run_probe("ridge", x, y, n_runs=n_runs, seed=seed, task="speed")
    control = run_probe("ridge", x, _shuffled(y, seed), n_runs=n_runs, seed=seed, task="speed_shuffled")
    report.extra.update({"shuffled_r2": control.mean["r2"], "filtered_rows": len(speeds) - len(kept)})
    return report


def eval_buildings(checkpoint: ModelCheckpoint, corpus: Corpus, labels: list[LabelRow], *, n_runs: int = 10,
                   seed: int = 0, embedder: Embedder | None = None) -> MetricReport:
    emb = embedder or Embedder(checkpoint, corpus)
    rows = []
    for r in labels:
        e = corpus.entities.get(r.way_id)
        if e is None or not e.is_polygon:
            raise TableError(f"label row way_id {r.way_id} is not a closed way in the corpus")
        rows.append(r)
    x = building_features(emb, [r.way_id for r in rows])
    y = np.array([r.label for r in rows], dtype=object)
    if len(set(y.tolist())) < 2:
        raise ProbeError("building labels contain a single class")
    report = run_probe("logistic", x, y, n_runs=n_runs, seed=seed, task="buildings")
    values, counts = np.unique(y.astype(str), return_counts=True)
    report.extra["majority_rate"] = float(counts.max() / counts.sum())
    return report


def eval_regions(checkpoint: ModelCheckpoint, corpus: Corpus, density: list[DensityRow], *, n_runs: int = 10,
                 seed: int = 0, embedder: Embedder | None = None) -> MetricReport:
    emb = embedder or Embedder(checkpoint, corpus)
    x = region_features(emb, [r.ring for r in density])
    y = np.array([r.density_kppl for r in density])
    return run_probe("ridge", x, y, n_runs=n_runs, seed=seed, task="regions")
