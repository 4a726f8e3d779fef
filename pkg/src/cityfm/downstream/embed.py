"""Entity and region embeddings from a frozen checkpoint."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cityfm.corpus import EMPTY_NODE_TAGS, Corpus, Entity, Kind, serialize_tags
from cityfm.geometry import (
    GeometryError,
    RoadIndex,
    build_context_groups,
    centroid,
    corpus_projection,
    latlon_array,
    point_in_ring,
    rasterize,
    representative_point,
    surface_area_m2,
)
from cityfm.loc_encoding import encode_locations
from cityfm.neural.checkpoint import ModelCheckpoint
from cityfm.neural.encoders import text_encode_batch, visual_encode_batch

BINARY_MAGIC = b"CFMEMB01"
CHUNK = 256


@dataclass(frozen=True)
class EmbeddingRecord:
    id: int
    modalities: tuple[str, ...]  # ordered subset of text, context, visual, location
    vector: np.ndarray

    def to_json(self) -> dict:
        return {"id": self.id, "modalities": list(self.modalities), "vector": [float(x) for x in self.vector]}


@dataclass(frozen=True)
class RegionEmbedding:
    vector: np.ndarray
    n_text: int
    n_visual: int

    @property
    def empty(self) -> bool:
        return self.n_text == 0 and self.n_visual == 0


def _chunk_of(key, order: dict, keys: list) -> list:
    """The fixed encoding batch holding ``key``, or ``[key]`` alone when it is not in ``keys``."""
    pos = order.get(key)
    if pos is None:
        return [key]
    start = pos - pos % CHUNK
    return keys[start:start + CHUNK]


class Embedder:
    """Caches text, visual and context embeddings of one corpus under one checkpoint.

    Matrix products can differ in the last bits with batch composition, so
    every tag set and polygon is always encoded inside the same fixed batch
    (corpus order, chunks of ``CHUNK``). Records are then bitwise independent
    of the order in which they are requested.
    """

    def __init__(self, checkpoint: ModelCheckpoint, corpus: Corpus):
        self.ckpt = checkpoint
        self.corpus = corpus
        cfg = checkpoint.config
        self.dim = checkpoint.params["text.mlp.w2"].shape[1]
        self.projection = corpus_projection(corpus)
        self.index = RoadIndex.from_corpus(corpus, self.projection)
        self.groups = {g.segment_id: g for g in build_context_groups(corpus, cfg.context_radius_m, self.index)}
        self.max_area = checkpoint.max_area_m2 or corpus.manifest.max_area_m2
        self._text: dict[str, np.ndarray] = {}
        self._visual: dict[int, np.ndarray] = {}
        tagged = {serialize_tags(e.tags) for e in corpus.entities.values() if e.tags}
        self._text_keys = sorted(tagged | {serialize_tags(EMPTY_NODE_TAGS)})
        self._text_order = {k: i for i, k in enumerate(self._text_keys)}
        self._poly_ids = sorted(e.id for e in corpus.polygons())
        self._poly_order = {k: i for i, k in enumerate(self._poly_ids)}

    # ----- text
    def text_for_tags(self, tag_sets: Sequence) -> np.ndarray:
        keys = [serialize_tags(t) for t in tag_sets]
        for k in keys:
            if k not in self._text:
                batch = _chunk_of(k, self._text_order, self._text_keys)
                seqs = [self.ckpt.vocab.encode(b) for b in batch]
                self._text.update(zip(batch, text_encode_batch(self.ckpt.params, seqs)))
        return np.array([self._text[k] for k in keys]).reshape(len(keys), self.dim)

    def text(self, ids: Sequence[int]) -> np.ndarray:
        return self.text_for_tags([self.corpus[i].tags for i in ids])

    @property
    def empty_text(self) -> np.ndarray:
        return self.text_for_tags([EMPTY_NODE_TAGS])[0]

    # ----- visual
    def visual(self, ids: Sequence[int]) -> np.ndarray:
        for i in ids:
            if i in self._visual:
                continue
            if not self.max_area:
                raise GeometryError("no polygon area normalizer available for visual embeddings")
            batch = _chunk_of(i, self._poly_order, self._poly_ids)
            grid = self.ckpt.config.grid_size
            grids, ratios = [], []
            for j in batch:
                ring = self.corpus.coords(self.corpus[j])
                grids.append(rasterize(ring, grid).bits)
                ratios.append(min(surface_area_m2(ring) / self.max_area, 1.0))
            out = visual_encode_batch(self.ckpt.params, np.array(grids, dtype=np.float64), np.array(ratios))
            self._visual.update(zip(batch, out))
        return np.array([self._visual[i] for i in ids]).reshape(len(ids), self.dim)

    # ----- context
    def context(self, segment_id: int, exclude: int | None = None) -> np.ndarray:
        """Mean text embedding of the road's group plus the empty node, ``exclude`` left out."""
        group = self.groups.get(segment_id)
        members = [m for m in (group.member_ids if group else ()) if m != exclude]
        tags = [self.corpus[m].tags for m in members] + [EMPTY_NODE_TAGS]
        return self.text_for_tags(tags).mean(axis=0)

    def road(self, segment_id: int) -> np.ndarray:
        return self.context(segment_id) + self.ckpt.road_offset(segment_id)

    def building_context(self, way_id: int) -> np.ndarray:
        point = representative_point(self.corpus, self.corpus[way_id])
        hit = self.index.nearest(point, self.ckpt.config.probe_radius_m) if len(self.index) else None
        if hit is None:
            return self.empty_text
        return self.context(hit[0], exclude=way_id)

    def location(self, points) -> np.ndarray:
        cfg = self.ckpt.config
        return encode_locations(latlon_array(points), cfg.d, cfg.lambda_)

    # ----- records
    def record(self, entity_id: int) -> EmbeddingRecord:
        return self.records([entity_id])[0]

    def records(self, ids: Iterable[int]) -> list[EmbeddingRecord]:
        out = []
        for i in ids:
            if i not in self.corpus:
                raise KeyError(f"unknown entity id {i}")
            e = self.corpus[i]
            blocks, mods = [], []
            if e.kind is Kind.RELATION:
                raise ValueError(f"relation {i} has no standalone embedding")
            if e.kind is Kind.NODE and not e.tags:
                raise ValueError(f"untagged node {i} is geometry only")
            if e.tags:
                blocks.append(self.text([i])[0])
                mods.append("text")
            if e.is_road:
                blocks.append(self.road(i))
                mods.append("context")
            elif e.is_polygon and self.max_area:
                blocks.append(self.visual([i])[0])
                mods.append("visual")
            if not blocks:
                raise ValueError(f"entity {i} has neither tags nor geometry to embed")
            blocks.append(self.location([representative_point(self.corpus, e)])[0])
            mods.append("location")
            out.append(EmbeddingRecord(i, tuple(mods), np.concatenate(blocks)))
        return out

    def embeddable_ids(self) -> list[int]:
        out = []
        for e in self.corpus.entities.values():
            if e.kind is Kind.NODE and e.tags:
                out.append(e.id)
            elif e.kind is Kind.WAY and (e.tags or e.is_road or (e.is_polygon and self.max_area)):
                out.append(e.id)
        return out

    # ----- regions
    def _points(self) -> tuple[np.ndarray, list[Entity]]:
        if not hasattr(self, "_pts"):
            ents = [e for e in self.corpus.entities.values()
                    if e.kind is not Kind.RELATION and (e.tags or e.is_polygon)]
            pts = np.array([[p.lat, p.lon] for p in (representative_point(self.corpus, e) for e in ents)])
            self._pts = (self.projection.forward(pts.reshape(-1, 2)), ents)
        return self._pts

    def region_members(self, ring) -> tuple[list[int], list[int]]:
        """(tagged entity ids, polygon ids) whose representative point lies inside ``ring``."""
        arr = latlon_array(ring)
        if len(arr) < 4 or not np.array_equal(arr[0], arr[-1]):
            raise GeometryError("region must be a closed ring with >= 4 points")
        ring_xy = self.projection.forward(arr)
        if abs(_signed_area(ring_xy)) == 0.0:
            raise GeometryError("degenerate region polygon")
        xy, ents = self._points()
        inside = point_in_ring(xy, ring_xy) if len(ents) else np.zeros(0, dtype=bool)
        chosen = [e for e, ok in zip(ents, inside) if ok]
        return [e.id for e in chosen if e.tags], [e.id for e in chosen if e.is_polygon and self.max_area]

    def region(self, ring) -> RegionEmbedding:
        """Mean text block, mean visual block, location code of the region centroid."""
        text_ids, poly_ids = self.region_members(ring)
        text = self.text(text_ids).mean(axis=0) if text_ids else np.zeros(self.dim)
        visual = self.visual(poly_ids).mean(axis=0) if poly_ids else np.zeros(self.dim)
        loc = self.location([centroid(ring)])[0]
        return RegionEmbedding(np.concatenate([text, visual, loc]), len(text_ids), len(poly_ids))


def _signed_area(xy: np.ndarray) -> float:
    return 0.5 * float(np.sum(xy[:-1, 0] * xy[1:, 1] - xy[1:, 0] * xy[:-1, 1]))


def embed_entity(checkpoint: ModelCheckpoint, corpus: Corpus, entity_id: int) -> EmbeddingRecord:
    return Embedder(checkpoint, corpus).record(entity_id)


def embed_region(checkpoint: ModelCheckpoint, corpus: Corpus, ring) -> RegionEmbedding:
    return Embedder(checkpoint, corpus).region(ring)


# ------------------------------------------------------------------------ export


def write_jsonl(records: Sequence[EmbeddingRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[EmbeddingRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(EmbeddingRecord(int(obj["id"]), tuple(obj["modalities"]), np.array(obj["vector"])))
    return out


def write_binary(records: Sequence[EmbeddingRecord], path: str | Path) -> Path:
    """Header (magic, row count, value count as little-endian u64) then row-major float64 values.

    Rows may differ in length; the JSON sidecar ``<path>.json`` lists ids,
    modalities and row lengths.
    """
    path = Path(path)
    flat = np.concatenate([r.vector for r in records]) if records else np.zeros(0)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC + struct.pack("<QQ", len(records), flat.size))
        fh.write(flat.astype("<f8").tobytes())
    sidecar = path.with_name(path.name + ".json")
    meta = {
        "dtype": "<f8",
        "ids": [r.id for r in records],
        "modalities": [list(r.modalities) for r in records],
        "lengths": [int(r.vector.size) for r in records],
    }
    sidecar.write_text(json.dumps(meta, sort_keys=True) + "\n")
    return sidecar


def read_binary(path: str | Path) -> list[EmbeddingRecord]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise ValueError("not an embedding export")
    n_rows, n_values = struct.unpack("<QQ", raw[8:24])
    flat = np.frombuffer(raw[24:], dtype="<f8")
    if flat.size != n_values:
        raise ValueError("truncated embedding export")
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    out, pos = [], 0
    for i, mods, n in zip(meta["ids"], meta["modalities"], meta["lengths"]):
        out.append(EmbeddingRecord(int(i), tuple(mods), flat[pos:pos + n].astype(np.float64)))
        pos += n
    if len(out) != n_rows:
        raise ValueError("row count mismatch between export and sidecar")
    return out
