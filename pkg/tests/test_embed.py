import struct

import numpy as np
import pytest
import shapely

from cityfm.corpus import EMPTY_NODE_TAGS, Kind
from cityfm.downstream.embed import (
    BINARY_MAGIC,
    Embedder,
    embed_entity,
    embed_region,
    read_binary,
    read_jsonl,
    write_binary,
    write_jsonl,
)
from cityfm.geometry import GeometryError, representative_point


@pytest.fixture(scope="module")
def embedder(small_city, small_checkpoint):
    return Embedder(small_checkpoint, small_city[0])


def _first(corpus, pred):
    return next(e for e in corpus.entities.values() if pred(e))


def test_record_layouts(embedder, small_checkpoint):
    corpus = embedder.corpus
    dim, loc = embedder.dim, 2 * small_checkpoint.config.d
    cases = [
        (lambda e: e.kind is Kind.NODE and e.tags, ("text", "location"), dim + loc),
        (lambda e: e.is_road and e.tags, ("text", "context", "location"), 2 * dim + loc),
        (lambda e: e.is_polygon and not e.tags, ("visual", "location"), dim + loc),
        (lambda e: e.is_polygon and e.tags, ("text", "visual", "location"), 2 * dim + loc),
    ]
    for pred, mods, size in cases:
        rec = embedder.record(_first(corpus, pred).id)
        assert rec.modalities == mods and rec.vector.shape == (size,)


def test_record_errors(embedder):
    corpus = embedder.corpus
    with pytest.raises(ValueError, match="relation"):
        embedder.record(_first(corpus, lambda e: e.kind is Kind.RELATION).id)
    with pytest.raises(ValueError, match="untagged node"):
        embedder.record(_first(corpus, lambda e: e.kind is Kind.NODE and not e.tags).id)
    with pytest.raises(KeyError):
        embedder.record(10**9)


def test_blocks_are_the_encoder_outputs(embedder, small_checkpoint):
    corpus = embedder.corpus
    road = _first(corpus, lambda e: e.is_road and e.tags and embedder.groups[e.id].member_ids)
    rec = embedder.record(road.id).vector
    dim = embedder.dim
    np.testing.assert_array_equal(rec[:dim], embedder.text_for_tags([road.tags])[0])
    members = [corpus[m].tags for m in embedder.groups[road.id].member_ids] + [EMPTY_NODE_TAGS]
    expected = embedder.text_for_tags(members).mean(axis=0) + small_checkpoint.road_offset(road.id)
    np.testing.assert_allclose(rec[dim:2 * dim], expected, atol=1e-14)
    np.testing.assert_array_equal(rec[2 * dim:], embedder.location([representative_point(corpus, road)])[0])


def test_deterministic(small_city, small_checkpoint, embedder):
    ids = embedder.embeddable_ids()[:50]
    again = Embedder(small_checkpoint, small_city[0]).records(ids)
    for a, b in zip(embedder.records(ids), again):
        assert a.id == b.id and np.array_equal(a.vector, b.vector)
    assert np.array_equal(embed_entity(small_checkpoint, small_city[0], ids[0]).vector, again[0].vector)


def test_embeddable_ids_all_embed(embedder):
    ids = embedder.embeddable_ids()
    assert len(embedder.records(ids)) == len(ids)


def _rect(lat0, lon0, lat1, lon1):
    return [(lat0, lon0), (lat0, lon1), (lat1, lon1), (lat1, lon0), (lat0, lon0)]


def test_region_containment_matches_shapely(embedder):
    corpus = embedder.corpus
    lo, hi = corpus.manifest.bbox
    ring = [(lo.lat, lo.lon), (hi.lat, (lo.lon + hi.lon) / 2), ((lo.lat + hi.lat) / 2, hi.lon), (lo.lat, lo.lon)]
    text_ids, poly_ids = embedder.region_members(ring)
    xy = embedder.projection.forward(np.array(ring))
    poly = shapely.Polygon(xy)
    expect_text, expect_poly = [], []
    for e in corpus.entities.values():
        if e.kind is Kind.RELATION or not (e.tags or e.is_polygon):
            continue
        p = representative_point(corpus, e)
        px, py = embedder.projection.forward(np.array([p.lat, p.lon]))
        if shapely.contains_xy(poly, px, py):
            if e.tags:
                expect_text.append(e.id)
            if e.is_polygon:
                expect_poly.append(e.id)
    assert text_ids == expect_text and poly_ids == expect_poly
    assert text_ids and poly_ids


def test_region_union_is_count_weighted(embedder):
    lo, hi = embedder.corpus.manifest.bbox
    rng = np.random.default_rng(0)
    for _ in range(5):
        cut = rng.uniform(lo.lon + 0.2 * (hi.lon - lo.lon), hi.lon - 0.2 * (hi.lon - lo.lon))
        west = embedder.region(_rect(lo.lat, lo.lon, hi.lat, cut))
        east = embedder.region(_rect(lo.lat, cut, hi.lat, hi.lon))
        union = embedder.region(_rect(lo.lat, lo.lon, hi.lat, hi.lon))
        dim = embedder.dim
        assert union.n_text == west.n_text + east.n_text
        assert union.n_visual == west.n_visual + east.n_visual
        text = (west.n_text * west.vector[:dim] + east.n_text * east.vector[:dim]) / union.n_text
        vis = (west.n_visual * west.vector[dim:2 * dim] + east.n_visual * east.vector[dim:2 * dim]) / union.n_visual
        np.testing.assert_allclose(union.vector[:dim], text, rtol=0, atol=1e-12)
        np.testing.assert_allclose(union.vector[dim:2 * dim], vis, rtol=0, atol=1e-12)


def test_empty_region(embedder, small_checkpoint):
    region = embed_region(small_checkpoint, embedder.corpus, _rect(-10.0, -10.0, -9.99, -9.99))
    assert region.empty
    assert not region.vector[:2 * embedder.dim].any()
    assert region.vector.shape == (2 * embedder.dim + 2 * small_checkpoint.config.d,)


def test_region_errors(embedder):
    with pytest.raises(GeometryError):
        embedder.region([(0, 0), (0, 1), (1, 1), (1, 0)])
    with pytest.raises(GeometryError):
        embedder.region([(0, 0), (0, 1), (0, 2), (0, 0)])


def test_export_round_trips(tmp_path, embedder):
    records = embedder.records(embedder.embeddable_ids()[:40])
    write_jsonl(records, tmp_path / "e.jsonl")
    sidecar = write_binary(records, tmp_path / "e.bin")
    assert sidecar.name == "e.bin.json"
    for back in (read_jsonl(tmp_path / "e.jsonl"), read_binary(tmp_path / "e.bin")):
        assert [r.id for r in back] == [r.id for r in records]
        assert [r.modalities for r in back] == [r.modalities for r in records]
        assert all(np.array_equal(a.vector, b.vector) for a, b in zip(back, records))
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:8] == BINARY_MAGIC
    n_rows, n_values = struct.unpack("<QQ", raw[8:24])
    assert n_rows == 40 and n_values == sum(r.vector.size for r in records)
    assert len(raw) == 24 + 8 * n_values


def test_binary_rejects_garbage(tmp_path, embedder):
    path = tmp_path / "e.bin"
    write_binary(embedder.records(embedder.embeddable_ids()[:3]), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_binary(path)
    path.write_bytes(b"XXXXXXXX" + bytes(16))
    with pytest.raises(ValueError):
        read_binary(path)
