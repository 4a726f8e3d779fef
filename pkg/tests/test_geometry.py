import math

import numpy as np
import pytest
import shapely
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from cityfm.corpus import GeoPoint, make_node
from cityfm.geometry import (
    METERS_PER_DEGREE,
    RASTER_FILL,
    GeometryError,
    LocalProjection,
    RoadIndex,
    UnreliableAreaWarning,
    build_context_groups,
    centroid,
    nearest_road_segment,
    point_in_ring,
    rasterize,
    surface_area_m2,
)

EARTH_RADIUS_M = METERS_PER_DEGREE * 180.0 / math.pi


def random_convex_ring(rng, lat0=None, span_m=None):
    """Closed (lat, lon) ring of a random convex polygon, counter-clockwise."""
    lat0 = rng.uniform(-60, 60) if lat0 is None else lat0
    lon0 = rng.uniform(-170, 170)
    span = rng.uniform(50, 2000) if span_m is None else span_m
    pts = rng.uniform(-0.5, 0.5, size=(rng.integers(3, 12), 2)) * span
    hull = pts[ConvexHull(pts).vertices]
    proj = LocalProjection(lat0, lon0)
    ring = proj.inverse(hull)
    return np.vstack([ring, ring[:1]])


def _mc_chunk(ring, n, rng):
    lat_lo, lon_lo = ring.min(axis=0)
    lat_hi, lon_hi = ring.max(axis=0)
    u = rng.uniform(np.sin(np.radians(lat_lo)), np.sin(np.radians(lat_hi)), n)
    lat = np.degrees(np.arcsin(u))  # uniform in area
    lon = rng.uniform(lon_lo, lon_hi, n)
    # convex, counter-clockwise in (lon, lat): inside means left of every edge
    inside = np.ones(n, dtype=bool)
    for (alat, alon), (blat, blon) in zip(ring[:-1], ring[1:]):
        inside &= (blon - alon) * (lat - alat) - (blat - alat) * (lon - alon) >= 0
    box = EARTH_RADIUS_M**2 * np.radians(lon_hi - lon_lo) * (np.sin(np.radians(lat_hi)) - np.sin(np.radians(lat_lo)))
    return box, int(inside.sum())


def monte_carlo_area(ring, n, rng, rel_sd=1e-3):
    """Area on the sphere by uniform sampling over the (lat, lon) bounding box.

    Draws at least ``n`` samples, more for thin shapes, until the binomial
    standard error falls below ``rel_sd`` of the estimate.
    """
    hits = total = 0
    while True:
        box, h = _mc_chunk(ring, n, rng)
        hits, total = hits + h, total + n
        p = hits / total
        if p > 0 and math.sqrt((1 - p) / (p * total)) <= rel_sd:
            return box * p


def test_area_matches_monte_carlo_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ring = random_convex_ring(rng)
        oracle = monte_carlo_area(ring, 1_000_000, rng)
        assert surface_area_m2(ring) == pytest.approx(oracle, rel=5e-3)


def test_equator_square():
    ring = [(0, 0), (0, 0.001), (0.001, 0.001), (0.001, 0), (0, 0)]
    assert surface_area_m2(ring) == pytest.approx(12392.1, rel=1e-3)
    assert surface_area_m2([GeoPoint(*p) for p in ring]) == surface_area_m2(ring)


@given(st.integers(0, 2**32 - 1))
def test_area_rotation_and_reversal_invariant(seed):
    rng = np.random.default_rng(seed)
    ring = random_convex_ring(rng)
    area = surface_area_m2(ring)
    rotated = np.vstack([ring[2:-1], ring[:3]])
    assert surface_area_m2(rotated) == pytest.approx(area, rel=1e-9)
    assert surface_area_m2(ring[::-1]) == pytest.approx(area, rel=1e-9)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
def test_area_scales_quadratically(seed, k):
    rng = np.random.default_rng(seed)
    ring = random_convex_ring(rng, lat0=10.0)
    c = ring[:-1].mean(axis=0)
    scaled = c + (ring - c) * k
    assert surface_area_m2(scaled) == pytest.approx(k * k * surface_area_m2(ring), rel=1e-6)


def test_area_errors_and_warnings():
    with pytest.raises(GeometryError):
        surface_area_m2([(0, 0), (0, 1), (1, 1)])
    with pytest.raises(GeometryError):
        surface_area_m2([(0, 0), (0, 1), (1, 1), (1, 0)])
    bowtie = [(0, 0), (0.001, 0.001), (0.001, 0), (0, 0.001), (0, 0)]
    with pytest.warns(UnreliableAreaWarning):
        surface_area_m2(bowtie)
    assert surface_area_m2([(0, 0), (0, 0.001), (0, 0.002), (0, 0)]) == 0.0


def test_centroid_ignores_closing_vertex():
    c = centroid([(0, 0), (0, 2), (2, 2), (2, 0), (0, 0)])
    assert (c.lat, c.lon) == (1.0, 1.0)
    with pytest.raises(GeometryError):
        centroid([])


def _analytic_fraction(ring, grid):
    proj = LocalProjection(*centroid(ring).__dict__.values())
    xy = proj.forward(np.asarray(ring))
    extent = float(np.max(xy.max(axis=0) - xy.min(axis=0)))
    scale = RASTER_FILL * grid / extent
    return surface_area_m2(ring) * scale**2 / grid**2


@pytest.mark.parametrize("grid", [64, 224])
def test_raster_fraction_on_convex_rings(grid):
    rng = np.random.default_rng(grid)
    for _ in range(50):
        ring = random_convex_ring(rng)
        r = rasterize(ring, grid)
        assert r.bits.shape == (grid, grid)
        assert r.fill_fraction == pytest.approx(_analytic_fraction(ring, grid), rel=0.02)


def test_raster_square_and_triangle():
    square = [(0, 0), (0, 0.001), (0.001, 0.001), (0.001, 0), (0, 0)]
    r = rasterize(square, 64)
    assert r.fill_fraction == pytest.approx(RASTER_FILL**2, rel=0.02)
    triangle = [(0, 0), (0, 0.001), (0.001, 0), (0, 0)]
    assert rasterize(triangle, 64).fill_fraction == pytest.approx(RASTER_FILL**2 / 2, rel=0.02)
    assert r.to_pgm().startswith(b"P5\n64 64\n255\n")


def test_raster_is_size_normalized_and_translation_stable():
    rng = np.random.default_rng(5)
    ring = random_convex_ring(rng, lat0=1.3, span_m=300)
    base = rasterize(ring, 64)
    assert rasterize(ring + [0.0, 0.01], 64) == base
    moved = rasterize(ring + [0.01, 0.0], 64)
    assert np.mean(moved.bits == base.bits) >= 0.99
    c = ring[:-1].mean(axis=0)
    bigger = rasterize(c + (ring - c) * 3, 64)
    assert np.mean(bigger.bits == base.bits) >= 0.99


def test_raster_rejects_degenerate():
    with pytest.raises(GeometryError):
        rasterize([(0, 0), (0, 0.001), (0, 0.002), (0, 0)], 64)
    with pytest.raises(GeometryError):
        rasterize([(0, 0), (0, 1), (1, 1), (1, 0)], 64)


def test_point_in_ring_matches_shapely():
    rng = np.random.default_rng(2)
    ring = random_convex_ring(rng, lat0=0.0)[:, ::-1] * 1000  # any planar ring works
    pts = rng.uniform(ring.min(axis=0), ring.max(axis=0), size=(2000, 2))
    expected = shapely.contains_xy(shapely.Polygon(ring), pts[:, 0], pts[:, 1])
    assert np.array_equal(point_in_ring(pts, ring), expected)


def _random_roads(rng, n, proj):
    roads = []
    for k in range(n):
        start = rng.uniform(-1000, 1000, 2)
        steps = rng.normal(0, 80, size=(rng.integers(1, 4), 2))
        xy = np.vstack([start, start + np.cumsum(steps, axis=0)])
        roads.append((k + 1, proj.inverse(xy)))
    return roads


def _shapely_nearest(roads, proj, p, radius):
    pt = shapely.Point(proj.forward(np.array([p.lat, p.lon])))
    best = min((shapely.LineString(proj.forward(ll)).distance(pt), rid) for rid, ll in roads)
    return (best[1], best[0]) if best[0] <= radius else None


def test_road_index_matches_brute_force():
    rng = np.random.default_rng(11)
    proj = LocalProjection(1.3, 103.8)
    roads = _random_roads(rng, 60, proj)
    index = RoadIndex(roads, proj)
    queries = proj.inverse(rng.uniform(-1100, 1100, size=(1000, 2)))
    for q in queries:
        p = GeoPoint(*q)
        for radius in (25.0, 50.0, 150.0):
            got = index.nearest(p, radius)
            want = _shapely_nearest(roads, proj, p, radius)
            assert got == index.nearest_brute(p, radius)
            if want is None:
                assert got is None
            else:
                assert got[0] == want[0] and got[1] == pytest.approx(want[1], abs=1e-6)


def test_nearest_road_tie_goes_to_smaller_id():
    proj = LocalProjection(0.0, 0.0)
    north = proj.inverse(np.array([[-50.0, 10.0], [50.0, 10.0]]))
    south = proj.inverse(np.array([[-50.0, -10.0], [50.0, -10.0]]))
    index = RoadIndex([(9, north), (4, south)], proj)
    assert nearest_road_segment(GeoPoint(0.0, 0.0), index, 50.0) == 4
    assert nearest_road_segment(GeoPoint(0.0, 0.0), index, 5.0) is None
    assert nearest_road_segment(GeoPoint(0.0, 0.0), RoadIndex([], proj)) is None


def test_context_groups(street_corpus):
    groups = build_context_groups(street_corpus, 50.0)
    assert [g.segment_id for g in groups] == [100]
    assert groups[0].member_ids == (10, 11, 101)
    assert groups[0].includes_empty_node


def test_context_groups_skip_far_and_untagged(street_corpus):
    far = street_corpus.replace({**street_corpus.entities, 12: make_node(12, 1.31, 103.8, {"shop": "x"})})
    groups = build_context_groups(far, 50.0)
    assert 12 not in groups[0].member_ids
    assert all(street_corpus[m].tags for m in groups[0].member_ids)
