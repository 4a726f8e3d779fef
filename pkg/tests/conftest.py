import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cityfm.config import TrainingConfig
from cityfm.corpus import from_entities, make_node, make_relation, make_way
from cityfm.downstream.synth import synth_city

settings.register_profile("cityfm", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cityfm")


def _tiny_config(**changes) -> TrainingConfig:
    base = dict(max_steps=30, grid_size=16, embed_dim=16, token_dim=8, batch_size=8, num_negatives=8, d=8,
                lr=1e-3, plateau_window=0, seed=0)
    base.update(changes)
    return TrainingConfig(**base)


@pytest.fixture(scope="session")
def small_city():
    """A few hundred entities with all ground-truth tables."""
    return synth_city(seed=3, n_roads=40, n_pois=80, n_buildings=120, n_regions=20)


@pytest.fixture(scope="session")
def small_checkpoint(small_city):
    from cityfm.pretrain.trainer import pretrain

    corpus, _ = small_city
    return pretrain(corpus, _tiny_config()).checkpoint


@pytest.fixture
def tiny_config():
    """Factory for CPU-cheap training configs."""
    return _tiny_config


@pytest.fixture
def street_corpus():
    """One east-west road with a cafe, a clinic and a square building beside it."""
    lat = 1.3
    nodes = [make_node(i, lat, 103.8 + 0.001 * (i - 1)) for i in range(1, 4)]
    nodes += [
        make_node(10, lat + 0.0002, 103.8005, {"amenity": "cafe"}),
        make_node(11, lat - 0.0002, 103.8012, {"amenity": "clinic"}),
    ]
    sq = [(lat + 0.0001, 103.8015), (lat + 0.0001, 103.8017), (lat + 0.0003, 103.8017), (lat + 0.0003, 103.8015)]
    nodes += [make_node(20 + k, a, b) for k, (a, b) in enumerate(sq)]
    ways = [
        make_way(100, [1, 2, 3], {"highway": "residential", "name": "Main"}),
        make_way(101, [20, 21, 22, 23, 20], {"building": "yes"}),
    ]
    rel = make_relation(200, [(100, "")], {"type": "route", "route": "bus"})
    return from_entities(nodes + ways + [rel])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the run summary, then fail the test if the check failed."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":").split(".")[0])):
            terminalreporter.write_line(line)
