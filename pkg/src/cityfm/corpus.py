"""OSM-style entity model, parsers, PII scrubbing and tag serialization."""

from __future__ import annotations

import dataclasses
import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence
from xml.parsers import expat


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus input."""


class Kind(str, enum.Enum):
    NODE = "node"
    WAY = "way"
    RELATION = "relation"


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise CorpusError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise CorpusError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class Entity:
    id: int
    kind: Kind
    tags: Mapping[str, str] = field(default_factory=dict)
    position: GeoPoint | None = None
    node_refs: tuple[int, ...] = ()
    members: tuple[tuple[int, str], ...] = ()

    @property
    def is_closed(self) -> bool:
        return self.kind is Kind.WAY and len(self.node_refs) >= 2 and self.node_refs[0] == self.node_refs[-1]

    @property
    def is_polygon(self) -> bool:
        # first == last plus at least three distinct corners
        return self.is_closed and len(self.node_refs) >= 4

    @property
    def is_road(self) -> bool:
        return self.kind is Kind.WAY and "highway" in self.tags and not self.is_closed


def make_node(id: int, lat: float, lon: float, tags: Mapping[str, str] | None = None) -> Entity:
    return Entity(int(id), Kind.NODE, _clean_tags(tags or {}), position=GeoPoint(float(lat), float(lon)))


def make_way(id: int, node_refs: Sequence[int], tags: Mapping[str, str] | None = None) -> Entity:
    return Entity(int(id), Kind.WAY, _clean_tags(tags or {}), node_refs=tuple(int(r) for r in node_refs))


def make_relation(id: int, members: Sequence[tuple[int, str]], tags: Mapping[str, str] | None = None) -> Entity:
    return Entity(
        int(id), Kind.RELATION, _clean_tags(tags or {}), members=tuple((int(m), str(role)) for m, role in members)
    )


def _clean_tags(tags: Mapping[str, str]) -> dict[str, str]:
    out = {}
    for k, v in tags.items():
        k, v = str(k), str(v)
        if not k:
            raise CorpusError("empty tag key")
        if "\n" in k:
            raise CorpusError(f"tag key contains a newline: {k!r}")
        if not v:
            continue
        out[k] = v
    return out


@dataclass
class CorpusManifest:
    counts: dict[str, int] = field(default_factory=lambda: {k.value: 0 for k in Kind})
    polygon_count: int = 0
    max_area_m2: float | None = None
    bbox: tuple[GeoPoint, GeoPoint] | None = None
    pii_removed_count: int = 0
    dropped_refs: int = 0

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.bbox is not None:
            out["bbox"] = [[p.lat, p.lon] for p in self.bbox]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusManifest":
        data = dict(data)
        if data.get("bbox") is not None:
            data["bbox"] = tuple(GeoPoint(*p) for p in data["bbox"])
        return cls(**data)


@dataclass
class Corpus:
    entities: dict[int, Entity] = field(default_factory=dict)
    manifest: CorpusManifest = field(default_factory=CorpusManifest)

    def __len__(self) -> int:
        return len(self.entities)

    def __getitem__(self, id: int) -> Entity:
        return self.entities[id]

    def __contains__(self, id: int) -> bool:
        return id in self.entities

    def of_kind(self, kind: Kind) -> list[Entity]:
        return [e for e in self.entities.values() if e.kind is kind]

    def roads(self) -> list[Entity]:
        return [e for e in self.entities.values() if e.is_road]

    def polygons(self) -> list[Entity]:
        return [e for e in self.entities.values() if e.is_polygon]

    def coords(self, way: Entity) -> list[GeoPoint]:
        return [self.entities[r].position for r in way.node_refs]

    def replace(self, entities: dict[int, Entity], **manifest_changes) -> "Corpus":
        return Corpus(entities, dataclasses.replace(self.manifest, **manifest_changes))


def _resolve(entities: dict[int, Entity], manifest: CorpusManifest | None = None) -> Corpus:
    """Drop ways with unknown node refs and relation members with unknown ids."""
    dropped = 0
    out: dict[int, Entity] = {}
    for e in entities.values():
        if e.kind is Kind.NODE:
            out[e.id] = e
    for e in entities.values():
        if e.kind is Kind.WAY:
            refs_ok = all(r in entities and entities[r].kind is Kind.NODE for r in e.node_refs)
            if not refs_ok or len(e.node_refs) < 2:
                dropped += 1
                continue
            out[e.id] = e
    relation_ids = {e.id for e in entities.values() if e.kind is Kind.RELATION}
    for e in entities.values():
        if e.kind is Kind.RELATION:
            kept = tuple(m for m in e.members if m[0] in out or m[0] in relation_ids)
            dropped += len(e.members) - len(kept)
            out[e.id] = dataclasses.replace(e, members=kept) if len(kept) != len(e.members) else e
    ordered = dict(sorted(out.items()))
    manifest = manifest or CorpusManifest()
    manifest = dataclasses.replace(manifest, dropped_refs=manifest.dropped_refs + dropped)
    corpus = Corpus(ordered, manifest)
    corpus.manifest = corpus_stats(corpus)
    return corpus


def from_entities(entities: Iterable[Entity]) -> Corpus:
    table: dict[int, Entity] = {}
    for e in entities:
        if e.id in table:
            raise CorpusError(f"duplicate entity id {e.id}")
        table[e.id] = e
    return _resolve(table)


# --------------------------------------------------------------------------- XML


class _OsmHandler:
    def __init__(self):
        self.entities: dict[int, Entity] = {}
        self._current: dict | None = None

    def start(self, name, attrs):
        if name in ("node", "way", "relation"):
            self._current = {"name": name, "attrs": attrs, "tags": {}, "refs": [], "members": []}
        elif self._current is None:
            return
        elif name == "tag":
            self._current["tags"][attrs.get("k", "")] = attrs.get("v", "")
        elif name == "nd":
            self._current["refs"].append(int(attrs["ref"]))
        elif name == "member":
            self._current["members"].append((int(attrs["ref"]), attrs.get("role", "")))

    def end(self, name):
        cur = self._current
        if cur is None or name != cur["name"]:
            return
        attrs = cur["attrs"]
        id = int(attrs["id"])
        if id in self.entities:
            raise CorpusError(f"duplicate entity id {id}")
        if name == "node":
            e = make_node(id, float(attrs["lat"]), float(attrs["lon"]), cur["tags"])
        elif name == "way":
            e = make_way(id, cur["refs"], cur["tags"])
        else:
            e = make_relation(id, cur["members"], cur["tags"])
        self.entities[id] = e
        self._current = None


def parse_osm_xml(data: bytes) -> Corpus:
    """Parse an OSM XML document (nodes, ways, relations with tag children)."""
    handler = _OsmHandler()
    parser = expat.ParserCreate()
    parser.StartElementHandler = handler.start
    parser.EndElementHandler = handler.end
    try:
        parser.Parse(data, True)
    except expat.ExpatError as exc:
        raise CorpusError(
            f"malformed XML at byte offset {parser.ErrorByteIndex}: {expat.ErrorString(exc.code)}"
        ) from exc
    except (KeyError, ValueError) as exc:
        if isinstance(exc, CorpusError):
            raise
        raise CorpusError(f"invalid element near byte offset {parser.CurrentByteIndex}: {exc}") from exc
    return _resolve(handler.entities)


# ------------------------------------------------------------------------- JSONL


def entity_to_json(e: Entity) -> dict:
    out: dict = {"id": e.id, "kind": e.kind.value}
    if e.kind is Kind.NODE:
        out["lat"] = e.position.lat
        out["lon"] = e.position.lon
    elif e.kind is Kind.WAY:
        out["node_refs"] = list(e.node_refs)
    else:
        out["members"] = [{"ref": m, "role": role} for m, role in e.members]
    out["tags"] = dict(sorted(e.tags.items()))
    return out


def entity_from_json(obj: dict) -> Entity:
    kind = obj.get("kind")
    tags = obj.get("tags") or {}
    if kind == "node":
        return make_node(obj["id"], obj["lat"], obj["lon"], tags)
    if kind == "way":
        return make_way(obj["id"], obj["node_refs"], tags)
    if kind == "relation":
        members = [(m["ref"], m.get("role", "")) if isinstance(m, dict) else tuple(m) for m in obj["members"]]
        return make_relation(obj["id"], members, tags)
    raise CorpusError(f"unknown entity kind {kind!r}")


def parse_jsonl(data: bytes) -> Corpus:
    """Parse one-entity-per-line JSON into a Corpus."""
    table: dict[int, Entity] = {}
    for lineno, line in enumerate(data.decode("utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            e = entity_from_json(json.loads(line))
        except CorpusError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"line {lineno}: invalid entity ({exc})") from exc
        if e.id in table:
            raise CorpusError(f"line {lineno}: duplicate entity id {e.id}")
        table[e.id] = e
    return _resolve(table)


def dumps_jsonl(corpus: Corpus) -> bytes:
    """Canonical JSON-lines form: entities by ascending id, sorted keys, no spaces."""
    lines = [
        json.dumps(entity_to_json(corpus.entities[i]), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        for i in sorted(corpus.entities)
    ]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def dumps_manifest(manifest: CorpusManifest) -> bytes:
    return (json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n").encode("utf-8")


# --------------------------------------------------------------------------- PII

PII_KEYS = {"phone", "website", "url", "email", "operator:phone", "fax", "mobile"}
PII_KEY_PREFIXES = ("contact:", "addr:")

URL_RE = re.compile(r"(?i)\b(?:https?://|ftp://|www\.)\S+")
EMAIL_RE = re.compile(r"(?i)\b[\w.+-]+@[\w-]+(?:\.[\w-]+)+\b")
_PHONE_CANDIDATE_RE = re.compile(r"\+?\(?\d[\d\s().\-/]{5,}\d")
_SEPARATED_DIGITS_RE = re.compile(r"\d\)?[\s\-./]+\(?\d")
_ISO_DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}")


def looks_like_phone(value: str) -> bool:
    """7-15 digits that start with ``+`` or are split by separators; bare digit runs and ISO dates are not phones."""
    for m in _PHONE_CANDIDATE_RE.finditer(value):
        text = m.group(0).strip()
        digits = sum(ch.isdigit() for ch in text)
        if not 7 <= digits <= 15 or _ISO_DATE_RE.fullmatch(text):
            continue
        if text.startswith("+") or _SEPARATED_DIGITS_RE.search(text):
            return True
    return False


def is_pii_tag(key: str, value: str) -> bool:
    k = key.lower()
    if k in PII_KEYS or k.startswith(PII_KEY_PREFIXES):
        return True
    return bool(URL_RE.search(value) or EMAIL_RE.search(value) or looks_like_phone(value))


def scrub_pii(corpus: Corpus) -> Corpus:
    """Remove personal-information tags; ``manifest.pii_removed_count`` grows by the number removed."""
    removed = 0
    out = {}
    for id, e in corpus.entities.items():
        keep = {k: v for k, v in e.tags.items() if not is_pii_tag(k, v)}
        if len(keep) != len(e.tags):
            removed += len(e.tags) - len(keep)
            e = dataclasses.replace(e, tags=keep)
        out[id] = e
    return corpus.replace(out, pii_removed_count=corpus.manifest.pii_removed_count + removed)


# ------------------------------------------------------------------ serialization

EMPTY_NODE_ID = -(2**62)  # outside any real OSM id range
EMPTY_NODE_TAGS = {"context": "none"}


def empty_node() -> Entity:
    """The synthetic member appended to every context group."""
    return Entity(EMPTY_NODE_ID, Kind.NODE, dict(EMPTY_NODE_TAGS), position=GeoPoint(0.0, 0.0))


def serialize_tags(entity: Entity | Mapping[str, str]) -> str:
    tags = entity.tags if isinstance(entity, Entity) else entity
    if not tags:
        raise CorpusError("cannot serialize an empty tag set")
    items = sorted(tags.items(), key=lambda kv: (kv[0].lower(), kv[0]))
    body = ", ".join(f"{k.lower()}: {v.lower()}" for k, v in items)
    return f"[CLS] {body} [SEP]"


# ------------------------------------------------------------------------- stats


def corpus_stats(
    corpus: Corpus,
    area_fn: Callable[[Sequence[GeoPoint]], float] | None = None,
    *,
    pii_removed_count: int | None = None,
    dropped_refs: int | None = None,
) -> CorpusManifest:
    """Entity counts, bounding box and the polygon area normalizer.

    ``area_fn`` maps a closed ring to square meters; it defaults to
    :func:`cityfm.geometry.surface_area_m2`.
    """
    if area_fn is None:
        from cityfm.geometry import surface_area_m2 as area_fn
    counts = Counter(e.kind.value for e in corpus.entities.values())
    nodes = [e.position for e in corpus.entities.values() if e.kind is Kind.NODE]
    bbox = None
    if nodes:
        bbox = (
            GeoPoint(min(p.lat for p in nodes), min(p.lon for p in nodes)),
            GeoPoint(max(p.lat for p in nodes), max(p.lon for p in nodes)),
        )
    polygons = corpus.polygons()
    areas = [area_fn(corpus.coords(w)) for w in polygons]
    max_area = max(areas) if areas and max(areas) > 0 else None
    return CorpusManifest(
        counts={k.value: counts.get(k.value, 0) for k in Kind},
        polygon_count=len(polygons),
        max_area_m2=max_area,
        bbox=bbox,
        pii_removed_count=corpus.manifest.pii_removed_count if pii_removed_count is None else pii_removed_count,
        dropped_refs=corpus.manifest.dropped_refs if dropped_refs is None else dropped_refs,
    )
