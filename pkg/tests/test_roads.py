import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cityfm.corpus import from_entities, make_node, make_relation, make_way
from cityfm.pretrain.roads import LinkWeightTable, link_weights, similar_roads


def random_corpus(rng, n_roads=None, n_relations=None):
    n_roads = int(rng.integers(1, 8)) if n_roads is None else n_roads
    n_relations = int(rng.integers(0, 6)) if n_relations is None else n_relations
    nodes = [make_node(i + 1, 0.0, 0.001 * i) for i in range(n_roads + 1)]
    roads = [make_way(100 + r, [r + 1, r + 2], {"highway": "primary"}) for r in range(n_roads)]
    rels = []
    for k in range(n_relations):
        members = rng.choice([w.id for w in roads], size=int(rng.integers(0, 5)), replace=True)
        rels.append(make_relation(500 + k, [(int(m), "") for m in members], {"route": "bus"}))
    return from_entities(nodes + roads + rels)


def brute_force_counts(corpus):
    counts = {}
    for way in corpus.entities.values():
        if way.kind.value != "way":
            continue
        n = 0
        for rel in corpus.entities.values():
            if rel.kind.value != "relation":
                continue
            found = False
            for member, _ in rel.members:
                if member == way.id:
                    found = True
            n += found
        counts[way.id] = n
    return counts


def test_matches_brute_force_on_random_corpora():
    rng = np.random.default_rng(0)
    for _ in range(200):
        corpus = random_corpus(rng)
        table = link_weights(corpus)
        expected = brute_force_counts(corpus)
        assert table.counts == expected
        top = max(expected.values())
        for w, c in expected.items():
            assert table.weights[w] == (c / top if top else 0.0)


def test_known_counts():
    nodes = [make_node(i, 0, i * 0.001) for i in range(1, 5)]
    ways = [make_way(10 + i, [i, i + 1], {"highway": "primary"}) for i in range(1, 4)]
    rels = [make_relation(100 + k, [(11, "")] + ([(12, "")] if k < 3 else []) + ([(13, "")] if k == 0 else []))
            for k in range(4)]
    table = link_weights(from_entities(nodes + ways + rels))
    assert table.counts == {11: 4, 12: 3, 13: 1}
    assert table.weights == {11: 1.0, 12: 0.75, 13: 0.25}
    assert table.has_relations


def test_no_relations_gives_zero_weights():
    table = link_weights(random_corpus(np.random.default_rng(1), n_roads=3, n_relations=0))
    assert set(table.weights.values()) == {0.0}
    assert not table.has_relations


def test_repeated_membership_counts_once():
    nodes = [make_node(1, 0, 0), make_node(2, 0, 0.001)]
    corpus = from_entities(nodes + [make_way(10, [1, 2], {"highway": "primary"}),
                                    make_relation(20, [(10, "forward"), (10, "backward")])])
    assert link_weights(corpus).counts == {10: 1}


def _table(weights):
    return LinkWeightTable({k: 0 for k in weights}, dict(weights), tuple(sorted(weights)))


def test_similar_examples():
    sims = similar_roads(_table({1: 0.50, 2: 0.52, 3: 0.70}), 0.05)
    assert sims == {1: frozenset({2}), 2: frozenset({1}), 3: frozenset()}
    everything = similar_roads(_table({1: 0.1, 2: 0.5, 3: 1.0}), 1.0)
    assert everything == {1: {2, 3}, 2: {1, 3}, 3: {1, 2}}


def test_threshold_is_strict():
    assert similar_roads(_table({1: 0.25, 2: 0.5}), 0.25)[1] == frozenset()
    assert similar_roads(_table({1: 0.0, 2: 1.0}), 1.0)[1] == frozenset()


@given(st.dictionaries(st.integers(1, 50), st.floats(0, 1), min_size=1, max_size=30), st.floats(0.001, 0.999))
def test_similarity_is_symmetric(weights, theta):
    sims = similar_roads(_table(weights), theta)
    for i, others in sims.items():
        assert i not in others
        for j in others:
            assert i in sims[j]


@given(st.integers(0, 2**32 - 1))
def test_weights_normalized(seed):
    table = link_weights(random_corpus(np.random.default_rng(seed)))
    values = list(table.weights.values())
    assert all(0.0 <= v <= 1.0 for v in values)
    if table.has_relations:
        assert max(values) == pytest.approx(1.0, abs=0)
