"""Seeded synthetic mini-city with ground truth for the three probe tasks.

The city is a grid of road segments split into districts. Each district has
a POI family (health, food, ...) whose categories only ever appear together,
a residential intensity, and a preferred building class. Bus routes run
mostly along arterial lines. Ground truth follows fixed formulas:

* road speed = class base - 14 * link weight - 0.8 * POIs on the road + N(0, 1) noise
* building class decides footprint shape and size
* region density is proportional to residential floor area in the region
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cityfm.corpus import Corpus, Entity, dumps_jsonl, dumps_manifest, from_entities, make_node, make_relation, make_way
from cityfm.geometry import METERS_PER_DEGREE, LocalProjection, shoelace

CENTER = (1.3000, 103.8000)
SPACING_M = 167.0
DISTRICTS_PER_SIDE = 3
FLOORS = 4
M2_PER_PERSON = 30.0

# (class, share) mirroring the land-use statistics of a real city benchmark
BUILDING_CLASSES = (
    ("residential", 0.671),
    ("industrial", 0.162),
    ("commercial", 0.081),
    ("commercial_residential", 0.025),
    ("educational", 0.022),
    ("civic", 0.019),
    ("sports", 0.012),
    ("transport", 0.008),
)
BUILDING_TAG = {
    "residential": "residential",
    "industrial": "industrial",
    "commercial": "commercial",
    "commercial_residential": "mixed_use",
    "educational": "school",
    "civic": "civic",
    "sports": "sports_hall",
    "transport": "transportation",
}
# footprint family, area range m², aspect range
SHAPES = {
    "residential": ("rect", (120, 320), (1.0, 1.4)),
    "industrial": ("rect", (2500, 5000), (2.5, 3.5)),
    "commercial": ("rect", (900, 1800), (1.0, 1.3)),
    "commercial_residential": ("L", (500, 900), (1.0, 1.3)),
    "educational": ("U", (1500, 3000), (1.2, 1.6)),
    "civic": ("octagon", (600, 1200), (1.0, 1.0)),
    "sports": ("ellipse", (3000, 6000), (1.4, 1.8)),
    "transport": ("rect", (800, 1500), (6.0, 8.0)),
}

POI_FAMILIES = {
    "health": (("amenity", "hospital"), ("healthcare", "clinic"), ("amenity", "doctors"),
               ("healthcare", "pharmacy"), ("shop", "medical_supply")),
    "food": (("amenity", "cafe"), ("amenity", "restaurant"), ("amenity", "fast_food"),
             ("shop", "bakery"), ("amenity", "bar")),
    "industry": (("man_made", "works"), ("shop", "hardware"), ("craft", "metal_construction"),
                 ("amenity", "fuel"), ("shop", "car_repair")),
    "leisure": (("leisure", "park"), ("tourism", "attraction"), ("leisure", "playground"),
                ("tourism", "museum"), ("leisure", "garden")),
    "education": (("amenity", "school"), ("amenity", "library"), ("amenity", "kindergarten"),
                  ("shop", "books"), ("amenity", "university")),
}
RESIDENTIAL_INTENSITY = {"health": 1.0, "food": 1.4, "industry": 0.15, "leisure": 1.2, "education": 0.9}
PREFERRED_CLASS = {
    "health": ("civic",),
    "food": ("commercial", "commercial_residential"),
    "industry": ("industrial", "transport"),
    "leisure": ("sports",),
    "education": ("educational",),
}
SPEED_BASE = {"primary": 30.0, "secondary": 28.0, "residential": 26.0}


@dataclass
class GroundTruth:
    speeds: list[tuple[int, float, int]] = field(default_factory=list)  # segment_id, mph, n_measurements
    labels: list[tuple[int, str]] = field(default_factory=list)  # way_id, class
    density: list[tuple[int, str, float]] = field(default_factory=list)  # region_id, wkt, kppl
    poi_family: dict[str, str] = field(default_factory=dict)  # "key=value" -> family
    road_district: dict[int, str] = field(default_factory=dict)


class _Ids:
    def __init__(self):
        self.next = 1

    def __call__(self) -> int:
        self.next += 1
        return self.next - 1


def _grid_side(n_roads: int) -> int:
    n = 2
    while 2 * n * (n - 1) < n_roads:
        n += 1
    return n


def _line_class(i: int) -> str:
    if i % 4 == 1:
        return "primary"
    if i % 4 == 3:
        return "secondary"
    return "residential"


def _footprint(kind: str, area: float, aspect: float) -> np.ndarray:
    """Counter-clockwise ring (not closed) in meters centered at the origin, scaled to ``area``."""
    if kind == "rect":
        w, h = aspect, 1.0
        pts = [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)]
    elif kind == "L":
        w, h = aspect, 1.0
        pts = [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, 0.0), (0.0, 0.0), (0.0, h / 2), (-w / 2, h / 2)]
    elif kind == "U":
        w, h = aspect, 1.0
        t = 0.3
        pts = [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (w / 2 - t * w, h / 2), (w / 2 - t * w, -h / 2 + t),
               (-w / 2 + t * w, -h / 2 + t), (-w / 2 + t * w, h / 2), (-w / 2, h / 2)]
    elif kind == "octagon":
        ang = np.arange(8) * 2 * np.pi / 8 + np.pi / 8
        pts = list(zip(np.cos(ang), np.sin(ang)))
    elif kind == "ellipse":
        ang = np.arange(24) * 2 * np.pi / 24
        pts = list(zip(aspect * np.cos(ang), np.sin(ang)))
    else:
        raise ValueError(kind)
    xy = np.array(pts, dtype=np.float64)
    closed = np.vstack([xy, xy[:1]])
    xy *= math.sqrt(area / abs(shoelace(closed)))
    return xy


def _rotate(xy: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return xy @ np.array([[c, s], [-s, c]])


def _stratified_classes(n: int, rng: np.random.Generator) -> list[str]:
    shares = np.array([p for _, p in BUILDING_CLASSES])
    raw = shares * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    out = [name for (name, _), c in zip(BUILDING_CLASSES, counts) for _ in range(c)]
    rng.shuffle(out)
    return out


def _wkt(ring_latlon: np.ndarray) -> str:
    coords = ", ".join(f"{float(lon)!r} {float(lat)!r}" for lat, lon in ring_latlon)
    return f"POLYGON (({coords}))"


def synth_city(seed: int = 7, n_roads: int = 220, n_pois: int = 660, n_buildings: int = 1500,
               n_regions: int = 100) -> tuple[Corpus, GroundTruth]:
    """Generate a corpus plus speed, building-class and density tables."""
    if n_roads < 4 or n_pois < 20:
        raise ValueError("synth_city needs at least 4 roads and 20 POIs")
    rng = np.random.default_rng(seed)
    proj = LocalProjection(*CENTER)
    ids = _Ids()
    entities: list[Entity] = []
    truth = GroundTruth()

    def node_at(xy, tags=None) -> int:
        lat, lon = proj.inverse(np.asarray(xy, dtype=np.float64))
        i = ids()
        entities.append(make_node(i, round(float(lat), 9), round(float(lon), 9), tags))
        return i

    # --- road grid
    n = _grid_side(n_roads)
    half = (n - 1) * SPACING_M / 2
    coord = np.arange(n) * SPACING_M - half
    inter = [[node_at((coord[j], coord[i])) for j in range(n)] for i in range(n)]
    segments = []  # (line key, order along line, (x0, y0), (x1, y1), node a, node b, class)
    for i in range(n):
        for j in range(n - 1):
            segments.append((("h", i), j, (coord[j], coord[i]), (coord[j + 1], coord[i]),
                             inter[i][j], inter[i][j + 1], _line_class(i)))
    for j in range(n):
        for i in range(n - 1):
            segments.append((("v", j), i, (coord[j], coord[i]), (coord[j], coord[i + 1]),
                             inter[i][j], inter[i + 1][j], _line_class(j)))
    segments = segments[:n_roads]

    families = list(POI_FAMILIES)
    order = list(rng.permutation(families))
    district_family = [order[k % len(order)] for k in range(DISTRICTS_PER_SIDE ** 2)]
    cell = (2 * half + 1e-9) / DISTRICTS_PER_SIDE

    def district_of(x, y) -> str:
        cx = min(int((x + half) // cell), DISTRICTS_PER_SIDE - 1)
        cy = min(int((y + half) // cell), DISTRICTS_PER_SIDE - 1)
        return district_family[cy * DISTRICTS_PER_SIDE + cx]

    roads = []  # (way id, seg)
    for seg in segments:
        line, _, p0, p1, a, b, cls = seg
        wid = ids()
        entities.append(make_way(wid, [a, b], {"highway": cls}))
        roads.append((wid, seg))
        mid = ((p0[0] + p1[0]) / 2, (p0[1] + p1[1]) / 2)
        truth.road_district[wid] = district_of(*mid)

    # --- bus routes concentrated on arterial lines
    lines: dict = {}
    for wid, seg in roads:
        lines.setdefault(seg[0], []).append((seg[1], wid, seg[6]))
    line_keys = sorted(lines)
    line_w = np.array([{"primary": 4.0, "secondary": 1.5, "residential": 0.2}[lines[k][0][2]] for k in line_keys])
    n_routes = max(2, len(roads) // 12)
    for _ in range(n_routes):
        key = line_keys[rng.choice(len(line_keys), p=line_w / line_w.sum())]
        members = [wid for _, wid, _ in sorted(lines[key])]
        length = int(rng.integers(max(1, math.ceil(len(members) / 2)), len(members) + 1))
        start = int(rng.integers(0, len(members) - length + 1))
        rid = ids()
        entities.append(make_relation(rid, [(m, "") for m in members[start:start + length]],
                                      {"type": "route", "route": "bus"}))

    # --- POIs along roads, category from the road's district family
    poi_count = {wid: 0 for wid, _ in roads}
    for fam, cats in POI_FAMILIES.items():
        for k, v in cats:
            truth.poi_family[f"{k}={v}"] = fam
    for _ in range(n_pois):
        wid, seg = roads[int(rng.integers(len(roads)))]
        fam = truth.road_district[wid]
        k, v = POI_FAMILIES[fam][int(rng.integers(len(POI_FAMILIES[fam])))]
        p0, p1 = np.array(seg[2]), np.array(seg[3])
        t = rng.uniform(0.25, 0.75)
        direction = (p1 - p0) / np.linalg.norm(p1 - p0)
        normal = np.array([-direction[1], direction[0]])
        offset = rng.uniform(8.0, 20.0) * (1 if rng.random() < 0.5 else -1)
        node_at(p0 + t * (p1 - p0) + offset * normal, {k: v})
        poi_count[wid] += 1

    # --- buildings inside blocks
    blocks = []  # (cx, cy, family, near_primary)
    for i in range(n - 1):
        for j in range(n - 1):
            cx, cy = (coord[j] + coord[j + 1]) / 2, (coord[i] + coord[i + 1]) / 2
            near_primary = "primary" in (_line_class(i), _line_class(i + 1), _line_class(j), _line_class(j + 1))
            blocks.append((cx, cy, district_of(cx, cy), near_primary))
    building_area: list[tuple[int, str, float, np.ndarray]] = []
    for cls in _stratified_classes(n_buildings, rng):
        weights = []
        for _, _, fam, near_primary in blocks:
            if cls == "residential":
                wgt = RESIDENTIAL_INTENSITY[fam]
            else:
                wgt = 5.0 if cls in PREFERRED_CLASS[fam] else 0.6
                if cls == "transport" and near_primary:
                    wgt *= 2.0
            weights.append(wgt)
        weights = np.array(weights)
        cx, cy, _, _ = blocks[rng.choice(len(blocks), p=weights / weights.sum())]
        kind, (a_lo, a_hi), (r_lo, r_hi) = SHAPES[cls]
        area = rng.uniform(a_lo, a_hi)
        xy = _footprint(kind, area, rng.uniform(r_lo, r_hi))
        angle = rng.uniform(-0.17, 0.17) + (math.pi / 2 if rng.random() < 0.5 else 0.0)
        xy = _rotate(xy, angle)
        reach = float(np.max(np.abs(xy)))
        slack = max(0.0, SPACING_M / 2 - 15.0 - reach)
        center = np.array([cx + rng.uniform(-slack, slack), cy + rng.uniform(-slack, slack)])
        refs = [node_at(center + p) for p in xy]
        wid = ids()
        tags = {"building": BUILDING_TAG[cls]} if rng.random() < 0.35 else {}
        entities.append(make_way(wid, refs + refs[:1], tags))
        truth.labels.append((wid, cls))
        building_area.append((wid, cls, area, center))

    # --- regions: rectangular cells over the road grid
    cols = math.ceil(math.sqrt(n_regions))
    rows = math.ceil(n_regions / cols)
    ex = 2 * half / cols
    ey = 2 * half / rows
    res_area = np.zeros(rows * cols)
    for _, cls, area, center in building_area:
        if cls != "residential":
            continue
        c = min(int((center[0] + half) // ex), cols - 1)
        r = min(int((center[1] + half) // ey), rows - 1)
        res_area[r * cols + c] += area
    region_km2 = ex * ey / 1e6
    for k in range(n_regions):
        r, c = divmod(k, cols)
        x0, y0 = -half + c * ex, -half + r * ey
        corners = np.array([(x0, y0), (x0 + ex, y0), (x0 + ex, y0 + ey), (x0, y0 + ey), (x0, y0)])
        ring = proj.inverse(corners)
        people = res_area[k] * FLOORS / M2_PER_PERSON
        density = people / region_km2 / 1000.0 * (1.0 + rng.normal(0.0, 0.05))
        truth.density.append((k + 1, _wkt(ring), round(max(density, 0.0), 6)))

    # --- speeds
    corpus = from_entities(entities)
    from cityfm.pretrain.roads import link_weights

    lw = link_weights(corpus).weights
    for wid, seg in roads:
        speed = SPEED_BASE[seg[6]] - 14.0 * lw[wid] - 0.8 * poi_count[wid] + rng.normal(0.0, 1.0)
        truth.speeds.append((wid, round(max(speed, 3.0), 4), int(rng.integers(4, 120))))
    return corpus, truth


def write_city(corpus: Corpus, truth: GroundTruth, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.jsonl").write_bytes(dumps_jsonl(corpus))
    (out / "manifest.json").write_bytes(dumps_manifest(corpus.manifest))
    with open(out / "speeds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "speed_mph", "n_measurements"])
        w.writerows(truth.speeds)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["way_id", "class"])
        w.writerows(truth.labels)
    with open(out / "density.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "wkt_polygon", "density_kppl"])
        w.writerows(truth.density)
    (out / "poi_families.json").write_text(json.dumps(truth.poi_family, sort_keys=True, indent=2) + "\n")
