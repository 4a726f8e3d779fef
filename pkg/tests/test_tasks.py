import logging

import numpy as np
import pytest

from cityfm.downstream.embed import Embedder
from cityfm.downstream.probes import ProbeError
from cityfm.downstream.tasks import (
    MIN_MEASUREMENTS,
    DensityRow,
    LabelRow,
    SpeedRow,
    TableError,
    building_features,
    eval_buildings,
    eval_regions,
    eval_speed,
    parse_region_wkt,
    read_density,
    read_labels,
    read_speeds,
    region_features,
    road_features,
)


@pytest.fixture(scope="module")
def embedder(small_city, small_checkpoint):
    return Embedder(small_checkpoint, small_city[0])


def test_read_speeds(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("segment_id,speed_mph,n_measurements\n5,31.5,12\n6,20,\n")
    assert read_speeds(path) == [SpeedRow(5, 31.5, 12), SpeedRow(6, 20.0, None)]
    path.write_text("segment_id,speed_mph\n5,31.5\n")
    assert read_speeds(path) == [SpeedRow(5, 31.5, None)]


def test_table_errors_name_the_line(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("segment_id,speed_mph\n5,31.5\n6,fast\n")
    with pytest.raises(TableError, match="line 3: bad speed_mph"):
        read_speeds(path)
    path.write_text("segment,speed_mph\n5,31.5\n")
    with pytest.raises(TableError, match="missing columns"):
        read_speeds(path)
    path.write_text("way_id,class\nx,house\n")
    with pytest.raises(TableError, match="line 2"):
        read_labels(path)


def test_read_labels_and_density(tmp_path):
    labels = tmp_path / "l.csv"
    labels.write_text("way_id,class\n7,retail\n8,residential\n")
    assert read_labels(labels) == [LabelRow(7, "retail"), LabelRow(8, "residential")]
    density = tmp_path / "d.csv"
    density.write_text('region_id,wkt_polygon,density_kppl\n1,"POLYGON ((10 1, 11 1, 11 2, 10 1))",3.5\n')
    assert read_density(density) == [DensityRow(1, ((1.0, 10.0), (1.0, 11.0), (2.0, 11.0), (1.0, 10.0)), 3.5)]


def test_wkt_errors():
    with pytest.raises(TableError, match="unreadable"):
        parse_region_wkt("POLYGON ((1 2, 3")
    with pytest.raises(TableError, match="got Point"):
        parse_region_wkt("POINT (1 2)")


def test_feature_shapes(embedder, small_city, small_checkpoint):
    _, truth = small_city
    dim, loc = embedder.dim, 2 * small_checkpoint.config.d
    roads = [r[0] for r in truth.speeds[:7]]
    assert road_features(embedder, roads).shape == (7, 2 * dim + loc)
    ways = [w for w, _ in truth.labels[:5]]
    assert building_features(embedder, ways).shape == (5, 2 * dim + loc)
    rings = [parse_region_wkt(w) for _, w, _ in truth.density[:3]]
    assert region_features(embedder, rings).shape == (3, 2 * dim + loc)


def test_eval_speed_filters_rows(embedder, small_city, small_checkpoint, caplog):
    corpus, truth = small_city
    rows = [SpeedRow(s, v, n) for s, v, n in truth.speeds]
    rows.append(SpeedRow(rows[0].segment_id, 99.0, MIN_MEASUREMENTS - 1))
    rows.append(SpeedRow(10**9, 30.0, 50))
    with caplog.at_level(logging.WARNING):
        report = eval_speed(small_checkpoint, corpus, rows, n_runs=2, embedder=embedder)
    assert "unknown road ids" in caplog.text
    assert report.extra["filtered_rows"] == 2
    assert report.n_samples == len(truth.speeds)
    assert "shuffled_r2" in report.extra and report.n_runs == 2


def test_eval_buildings(embedder, small_city, small_checkpoint):
    corpus, truth = small_city
    rows = [LabelRow(w, c) for w, c in truth.labels]
    report = eval_buildings(small_checkpoint, corpus, rows, n_runs=2, embedder=embedder)
    labels = [c for _, c in truth.labels]
    majority = max(labels.count(c) for c in set(labels)) / len(labels)
    assert report.extra["majority_rate"] == pytest.approx(majority)
    assert 0 <= report.mean["accuracy"] <= 1


def test_eval_buildings_rejects_bad_rows(embedder, small_city, small_checkpoint):
    corpus, truth = small_city
    road = corpus.roads()[0].id
    with pytest.raises(TableError, match=str(road)):
        eval_buildings(small_checkpoint, corpus, [LabelRow(road, "x")], embedder=embedder)
    one_class = [LabelRow(w, "same") for w, _ in truth.labels]
    with pytest.raises(ProbeError, match="single class"):
        eval_buildings(small_checkpoint, corpus, one_class, embedder=embedder)


def test_eval_regions(embedder, small_city, small_checkpoint):
    corpus, truth = small_city
    rows = [DensityRow(i, parse_region_wkt(w), d) for i, w, d in truth.density]
    report = eval_regions(small_checkpoint, corpus, rows, n_runs=2, embedder=embedder)
    assert report.n_samples == len(rows) and np.isfinite(report.mean["r2"])


def test_eval_is_seeded(embedder, small_city, small_checkpoint):
    corpus, truth = small_city
    rows = [DensityRow(i, parse_region_wkt(w), d) for i, w, d in truth.density]
    a = eval_regions(small_checkpoint, corpus, rows, n_runs=2, seed=5, embedder=embedder)
    b = eval_regions(small_checkpoint, corpus, rows, n_runs=2, seed=5)
    assert a.mean == b.mean
