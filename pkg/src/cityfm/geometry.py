"""Planar geometry at city scale: areas, centroids, rasters, road assignment."""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from cityfm.corpus import Corpus, Entity, GeoPoint, Kind

METERS_PER_DEGREE = 111_320.0
RASTER_FILL = 0.9


class GeometryError(ValueError):
    pass


class UnreliableAreaWarning(UserWarning):
    """Area of a self-intersecting ring; the absolute shoelace value is returned."""


def latlon_array(points) -> np.ndarray:
    """(n, 2) array of (lat, lon) from GeoPoints or pairs."""
    if isinstance(points, np.ndarray):
        arr = points.astype(np.float64, copy=False)
    else:
        arr = np.array(
            [(p.lat, p.lon) if isinstance(p, GeoPoint) else (p[0], p[1]) for p in points], dtype=np.float64
        ).reshape(-1, 2)
    return arr


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection anchored at (lat0, lon0); x east, y north, meters."""

    lat0: float
    lon0: float

    @property
    def kx(self) -> float:
        return METERS_PER_DEGREE * math.cos(math.radians(self.lat0))

    def forward(self, latlon: np.ndarray) -> np.ndarray:
        latlon = np.asarray(latlon, dtype=np.float64)
        x = (latlon[..., 1] - self.lon0) * self.kx
        y = (latlon[..., 0] - self.lat0) * METERS_PER_DEGREE
        return np.stack([x, y], axis=-1)

    def inverse(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        lat = xy[..., 1] / METERS_PER_DEGREE + self.lat0
        lon = xy[..., 0] / self.kx + self.lon0
        return np.stack([lat, lon], axis=-1)

    @classmethod
    def around(cls, points) -> "LocalProjection":
        c = centroid(points)
        return cls(c.lat, c.lon)


def _distinct(arr: np.ndarray) -> np.ndarray:
    if len(arr) == 0:
        return arr
    _, first = np.unique(arr, axis=0, return_index=True)
    return arr[np.sort(first)]


def centroid(ring) -> GeoPoint:
    """Arithmetic mean of the distinct vertices."""
    arr = latlon_array(ring)
    if len(arr) == 0:
        raise GeometryError("centroid of an empty ring")
    lat, lon = _distinct(arr).mean(axis=0)
    return GeoPoint(float(lat), float(lon))


def _check_closed(arr: np.ndarray) -> None:
    if len(arr) < 4:
        raise GeometryError(f"a closed ring needs >= 4 points, got {len(arr)}")
    if not np.array_equal(arr[0], arr[-1]):
        raise GeometryError("ring is not closed (first point != last point)")


def shoelace(xy: np.ndarray) -> float:
    """Signed area of a closed planar ring (last point repeats the first)."""
    x, y = xy[:-1, 0], xy[:-1, 1]
    x1, y1 = xy[1:, 0], xy[1:, 1]
    return 0.5 * float(np.sum(x * y1 - x1 * y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def ring_is_simple(xy: np.ndarray) -> bool:
    """True when no two non-adjacent edges properly cross."""
    n = len(xy) - 1
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(xy[i], xy[i + 1], xy[j], xy[j + 1]):
                return False
    return True


def surface_area_m2(ring) -> float:
    """Polygon area in m² via shoelace on a local equirectangular projection."""
    arr = latlon_array(ring)
    _check_closed(arr)
    xy = LocalProjection.around(arr).forward(arr)
    if len(xy) > 4 and not ring_is_simple(xy):
        warnings.warn("self-intersecting ring: area is unreliable", UnreliableAreaWarning, stacklevel=2)
    return abs(shoelace(xy))


# ------------------------------------------------------------------------ raster


@dataclass(frozen=True)
class RasterGrid:
    width: int
    height: int
    bits: np.ndarray  # (height, width) uint8, row 0 = north

    @property
    def fill_fraction(self) -> float:
        return float(self.bits.mean())

    def to_pgm(self) -> bytes:
        """Binary PGM (P5), set bits white."""
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + (self.bits.astype(np.uint8) * 255).tobytes()

    def __eq__(self, other):
        return (
            isinstance(other, RasterGrid)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.bits, other.bits)
        )


def scanline_fill(px: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd fill of a closed ring given in pixel coordinates (x right, y down).

    A pixel is set when its center lies inside. Each scanline crossing toggles
    the parity from the first pixel center at or right of the crossing, and a
    running parity along the row gives the fill.
    """
    a, b = px[:-1], px[1:]
    keep = a[:, 1] != b[:, 1]
    a, b = a[keep], b[keep]
    rows = np.arange(height) + 0.5
    y0, y1 = a[:, 1][None, :], b[:, 1][None, :]
    yc = rows[:, None]
    hit = ((y0 <= yc) & (yc < y1)) | ((y1 <= yc) & (yc < y0))
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = a[:, 0][None, :] + (yc - y0) * (b[:, 0] - a[:, 0])[None, :] / (y1 - y0)
    r_idx, e_idx = np.nonzero(hit)
    cols = np.clip(np.ceil(xs[r_idx, e_idx] - 0.5), 0, width).astype(np.int64)
    toggles = np.zeros((height, width + 1), dtype=np.int64)
    np.add.at(toggles, (r_idx, cols), 1)
    return (np.cumsum(toggles, axis=1)[:, :width] % 2).astype(np.uint8)


def raster_transform(xy: np.ndarray, grid_size: int) -> np.ndarray:
    """Scale projected coordinates so the bbox spans 90% of the grid, centered, y down."""
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise GeometryError("degenerate ring")
    scale = RASTER_FILL * grid_size / extent
    mid = (lo + hi) / 2
    out = np.empty_like(xy)
    out[:, 0] = grid_size / 2 + (xy[:, 0] - mid[0]) * scale
    out[:, 1] = grid_size / 2 - (xy[:, 1] - mid[1]) * scale
    return out


def rasterize(ring, grid_size: int = 224) -> RasterGrid:
    """Binary image of a closed ring at a fixed fraction of the grid, size-independent."""
    arr = latlon_array(ring)
    _check_closed(arr)
    xy = LocalProjection.around(arr).forward(arr)
    if shoelace(xy) == 0.0:
        raise GeometryError("zero-area ring cannot be rasterized")
    px = raster_transform(xy, grid_size)
    return RasterGrid(grid_size, grid_size, scanline_fill(px, grid_size, grid_size))


def point_in_ring(xy: np.ndarray, ring_xy: np.ndarray) -> np.ndarray:
    """Even-odd containment of points ``xy`` (n, 2) in a closed ring."""
    xy = np.atleast_2d(xy)
    a, b = ring_xy[:-1], ring_xy[1:]
    px, py = xy[:, 0][:, None], xy[:, 1][:, None]
    cond = (a[:, 1][None, :] > py) != (b[:, 1][None, :] > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = a[:, 0] + (py - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    crossings = cond & (px < xint)
    return (crossings.sum(axis=1) % 2).astype(bool)


# ----------------------------------------------------------------- road indexing


def point_segment_distances(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, np.einsum("ij,ij->i", p - a, ab) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(proj[:, 0] - p[0], proj[:, 1] - p[1])


class RoadIndex:
    """Uniform-grid bucket index over road polyline segments (projected meters).

    Immutable after construction; queries are read-only.
    """

    TIE_TOL_M = 1e-9

    def __init__(self, roads: Sequence[tuple[int, np.ndarray]], projection: LocalProjection, cell_m: float = 50.0):
        self.projection = projection
        self.cell_m = float(cell_m)
        self.road_ids = np.array([rid for rid, _ in roads], dtype=np.int64)
        starts, ends, owner = [], [], []
        for k, (_, latlon) in enumerate(roads):
            xy = projection.forward(latlon_array(latlon))
            starts.append(xy[:-1])
            ends.append(xy[1:])
            owner.append(np.full(len(xy) - 1, k))
        if roads:
            self.a, self.b = np.concatenate(starts), np.concatenate(ends)
            self.owner = np.concatenate(owner)
        else:
            self.a = self.b = np.zeros((0, 2))
            self.owner = np.zeros(0, dtype=np.int64)
        buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        lo = np.minimum(self.a, self.b) // self.cell_m
        hi = np.maximum(self.a, self.b) // self.cell_m
        for s in range(len(self.a)):
            for i in range(int(lo[s, 0]), int(hi[s, 0]) + 1):
                for j in range(int(lo[s, 1]), int(hi[s, 1]) + 1):
                    buckets[(i, j)].append(s)
        self._buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}

    @classmethod
    def from_corpus(cls, corpus: Corpus, projection: LocalProjection | None = None, cell_m: float = 50.0):
        roads = [(w.id, latlon_array(corpus.coords(w))) for w in corpus.roads()]
        if projection is None:
            projection = corpus_projection(corpus)
        return cls(roads, projection, cell_m)

    def __len__(self) -> int:
        return len(self.road_ids)

    def _pick(self, p: np.ndarray, segs: np.ndarray, radius: float) -> tuple[int, float] | None:
        if len(segs) == 0:
            return None
        d = point_segment_distances(p, self.a[segs], self.b[segs])
        best = float(d.min())
        if best > radius:
            return None
        near = segs[d <= best + self.TIE_TOL_M]
        rid = int(self.road_ids[self.owner[near]].min())
        return rid, best

    def nearest(self, point, radius: float) -> tuple[int, float] | None:
        """(road id, distance m) of the closest road within ``radius``; ties -> smaller id."""
        p = self.projection.forward(latlon_array([point])[0])
        if not math.isfinite(radius) or radius > 20 * self.cell_m:
            return self._pick(p, np.arange(len(self.a)), radius)
        i0, j0 = int((p[0] - radius) // self.cell_m), int((p[1] - radius) // self.cell_m)
        i1, j1 = int((p[0] + radius) // self.cell_m), int((p[1] + radius) // self.cell_m)
        found = [self._buckets[(i, j)] for i in range(i0, i1 + 1) for j in range(j0, j1 + 1) if (i, j) in self._buckets]
        if not found:
            return None
        return self._pick(p, np.unique(np.concatenate(found)), radius)

    def nearest_brute(self, point, radius: float) -> tuple[int, float] | None:
        p = self.projection.forward(latlon_array([point])[0])
        return self._pick(p, np.arange(len(self.a)), radius)


def corpus_projection(corpus: Corpus) -> LocalProjection:
    bbox = corpus.manifest.bbox
    if bbox is None:
        return LocalProjection(0.0, 0.0)
    return LocalProjection((bbox[0].lat + bbox[1].lat) / 2, (bbox[0].lon + bbox[1].lon) / 2)


def nearest_road_segment(point, roads: RoadIndex, radius: float = 50.0) -> int | None:
    """Id of the road polyline closest to ``point`` if within ``radius`` meters."""
    if len(roads) == 0:
        return None
    hit = roads.nearest(point, radius)
    return None if hit is None else hit[0]


# ---------------------------------------------------------------- context groups


@dataclass(frozen=True)
class ContextGroup:
    segment_id: int
    member_ids: tuple[int, ...]
    includes_empty_node: bool = True


def representative_point(corpus: Corpus, e: Entity) -> GeoPoint:
    """Position for nodes, vertex centroid for ways."""
    if e.kind is Kind.NODE:
        return e.position
    if e.kind is Kind.WAY:
        return centroid(corpus.coords(e))
    raise GeometryError(f"relation {e.id} has no representative point")


def assignable_entities(corpus: Corpus) -> Iterable[Entity]:
    """Tagged nodes and tagged closed polygons."""
    for e in corpus.entities.values():
        if not e.tags:
            continue
        if e.kind is Kind.NODE or (e.kind is Kind.WAY and e.is_polygon):
            yield e


def build_context_groups(corpus: Corpus, radius: float = 50.0, index: RoadIndex | None = None) -> list[ContextGroup]:
    """One group per road polyline; every assignable entity joins its nearest road within ``radius``."""
    index = index or RoadIndex.from_corpus(corpus)
    members: dict[int, list[int]] = {int(rid): [] for rid in index.road_ids}
    for e in assignable_entities(corpus):
        rid = nearest_road_segment(representative_point(corpus, e), index, radius)
        if rid is not None:
            members[rid].append(e.id)
    return [ContextGroup(rid, tuple(ids)) for rid, ids in sorted(members.items())]
