"""
    test_kgraph
    ~~~~~~~~~~~

    Tests for the :mod:`~kgmc.kgraph` module.
"""
import numpy
import pytest
from shapely import geometry

from kgmc import config, exceptions, geom, kgraph

R = kgraph.RelationType


def square(entity_id, x, y, side=0.5):
    h = side / 2.0
    return geom.PolyEntity.from_coords(entity_id, [(x - h, y - h), (x + h, y - h), (x + h, y + h), (x - h, y + h)])


@pytest.fixture(scope='session')
def grid_scene():
    """
    Fixture that yields four small squares arranged around the origin.
    """
    entities = [square('a', 0, 0), square('b', 2, 2), square('c', -2, 2), square('d', 2, 0)]
    return geom.Gdb.build(entities, [])


@pytest.fixture(scope='session')
def road_scene():
    """
    Fixture that yields two connected road segments, a detached one and buildings near the first.
    """
    entities = [square('near', 5, 3, side=1.0), square('far', 5, 30, side=1.0)]
    segments = [geom.Segment('s1', [(0, 0), (10, 0)], 'w1'), geom.Segment('s2', [(10.5, 0), (20, 0)], 'w2'),
                geom.Segment('s3', [(0, 50), (10, 50)], 'w3')]
    return geom.Gdb.build(entities, segments)


@pytest.fixture(scope='session', params=[1, 4])
def workers(request):
    """
    Fixture that yields worker counts for knowledge graph construction.
    """
    return request.param


@pytest.fixture(scope='session', params=[3, 11, 40])
def random_scene(request):
    """
    Fixture that yields a random scene of small squares and short segments.
    """
    rng = numpy.random.default_rng(request.param)
    entities = [square('p{}'.format(k), *rng.uniform(0, 60, size=2)) for k in range(request.param)]
    segments = []
    for k in range(request.param // 2):
        x, y = rng.uniform(0, 60, size=2)
        dx, dy = rng.uniform(1, 10, size=2)
        segments.append(geom.Segment('s{}'.format(k), [(x, y), (x + dx, y + dy)], 's{}'.format(k)))
    return geom.Gdb.build(entities, segments)


def test_grid_scene_relations(grid_scene):
    """
    Assert that the grid relations of the four-square scene match the hand-derived triples.
    """
    kg = kgraph.build_knowledge_graph(grid_scene, config.GeoConfig(mu=6.0))
    assert set(kg.triples) == {
        ('a', R.TopRight, 'b'), ('a', R.TopLeft, 'c'), ('a', R.Right, 'd'),
        ('b', R.BottomLeft, 'a'), ('b', R.Bottom, 'd'),
        ('c', R.BottomRight, 'a'),
        ('d', R.Left, 'a'), ('d', R.Top, 'b'),
    }


def test_classify_grid_relation_cells():
    """
    Assert that every grid cell maps to its relation and the center cell is Close.
    """
    origin = geom.Point(0, 0)
    expected = {(-2, -2): R.BottomLeft, (0, -2): R.Bottom, (2, -2): R.BottomRight, (-2, 0): R.Left,
                (0, 0.5): R.Close, (2, 0): R.Right, (-2, 2): R.TopLeft, (0, 2): R.Top, (2, 2): R.TopRight}
    for (x, y), relation in expected.items():
        assert kgraph.classify_grid_relation(origin, geom.Point(x, y), 6.0) is relation


def test_classify_grid_relation_boundaries_have_no_relation():
    """
    Assert that points on a threshold line or outside the grid have no relation.
    """
    origin = geom.Point(0, 0)
    for x, y in [(1, 0), (0, -1), (3, 0), (0, 3), (10, 10)]:
        assert kgraph.classify_grid_relation(origin, geom.Point(x, y), 6.0) is None


def test_classify_grid_relation_requires_positive_width():
    """
    Assert that a non-positive grid width raises :class:`~kgmc.exceptions.ConfigError`.
    """
    with pytest.raises(exceptions.ConfigError):
        kgraph.classify_grid_relation(geom.Point(0, 0), geom.Point(1, 1), 0)


def test_segment_relations(road_scene, workers):
    """
    Assert that segments link to polygons in their corridor and to segments with nearby endpoints.
    """
    kg = kgraph.build_knowledge_graph(road_scene, config.GeoConfig(lambda_buf=8.0, delta=1.0, workers=workers))
    segment_triples = {t for t in kg.triples if t.rel not in kgraph.GRID_RELATIONS}
    assert segment_triples == {('s1', R.Inside, 'near'), ('s1', R.Connected, 's2'), ('s2', R.Connected, 's1')}
    assert ('near', R.Close, 's1') in kg.triples


def test_grid_triples_match_brute_force(random_scene):
    """
    Assert that the index-backed construction emits exactly the triples of an all-pairs scan.
    """
    cfg = config.GeoConfig(mu=15.0, lambda_buf=6.0, delta=2.0)
    kg = kgraph.build_knowledge_graph(random_scene, cfg)
    shapes = list(random_scene.entities) + list(random_scene.segments)
    expected = set()
    for e in random_scene.entities:
        for u in shapes:
            relation = kgraph.classify_grid_relation(e.center, u.center, cfg.mu) if u.id != e.id else None
            if relation is not None:
                expected.add((e.id, relation, u.id))
    for s in random_scene.segments:
        corridor = geom.buffer_segment(s, cfg.lambda_buf)
        for e in random_scene.entities:
            if corridor.covers(geometry.Point(e.center.x, e.center.y)):
                expected.add((s.id, R.Inside, e.id))
        for other in random_scene.segments:
            ends = [(s.points[0], s.points[-1]), (other.points[0], other.points[-1])]
            if other.id != s.id and any(numpy.hypot(p.x - q.x, p.y - q.y) <= cfg.delta
                                        for p in ends[0] for q in ends[1]):
                expected.add((s.id, R.Connected, other.id))
    assert set(kg.triples) == expected


def test_triples_are_deterministic(random_scene):
    """
    Assert that the triple order does not depend on the worker count.
    """
    serial = kgraph.build_knowledge_graph(random_scene, config.GeoConfig(mu=15.0))
    parallel = kgraph.build_knowledge_graph(random_scene, config.GeoConfig(mu=15.0, workers=3))
    assert serial.triples == parallel.triples


def test_build_knowledge_graph_benchmark(benchmark, random_scene):
    """
    Assert that benchmarked construction yields the same graph as a plain call.
    """
    cfg = config.GeoConfig(mu=15.0)
    kg = benchmark(kgraph.build_knowledge_graph, random_scene, cfg)
    assert kg.triples == kgraph.build_knowledge_graph(random_scene, cfg).triples


def test_k_hop_neighbors_on_chain():
    """
    Assert that :func:`~kgmc.kgraph.k_hop_neighbors` returns entities at exactly k hops.
    """
    ids = ['a', 'b', 'c', 'd']
    triples = [('a', R.Right, 'b'), ('c', R.Left, 'b'), ('c', R.Right, 'd')]
    kg = kgraph.KnowledgeGraph(ids, [geom.POLYGON] * 4, triples, numpy.zeros((4, 2)))
    assert kgraph.k_hop_neighbors(kg, 'a', 1) == {'b'}
    assert kgraph.k_hop_neighbors(kg, 'a', 2) == {'c'}
    assert kgraph.k_hop_neighbors(kg, 'a', 3) == {'d'}
    assert kgraph.k_hop_neighbors(kg, 'a', 4) == set()
    assert kgraph.k_hop_neighbors(kg, 'b', 1) == {'a', 'c'}


def test_k_hop_neighbors_rejects_bad_arguments():
    """
    Assert that a hop count below one or an unknown id is rejected.
    """
    kg = kgraph.KnowledgeGraph(['a'], [geom.POLYGON], [], numpy.zeros((1, 1)))
    with pytest.raises(exceptions.ConfigError):
        kgraph.k_hop_neighbors(kg, 'a', 0)
    with pytest.raises(exceptions.UnknownEntityError):
        kgraph.k_hop_neighbors(kg, 'z', 1)


def test_triple_with_unknown_id_raises_unknown_entity_error():
    """
    Assert that a triple naming an id outside the graph is rejected.
    """
    with pytest.raises(exceptions.UnknownEntityError):
        kgraph.KnowledgeGraph(['a'], [geom.POLYGON], [('a', R.Top, 'b')], numpy.zeros((1, 1)))


def test_self_loop_raises_conflation_error():
    """
    Assert that a triple linking an entity to itself is rejected.
    """
    with pytest.raises(exceptions.ConflationError):
        kgraph.KnowledgeGraph(['a'], [geom.POLYGON], [('a', R.Top, 'a')], numpy.zeros((1, 1)))


def test_saved_kg_loads_back(random_scene, tmpdir):
    """
    Assert that a knowledge graph written to TSV with its sidecar loads with the same content.
    """
    kg = kgraph.build_knowledge_graph(random_scene, config.GeoConfig(mu=15.0))
    tsv_path, _ = kgraph.save_kg(kg, str(tmpdir.join('source')))
    loaded = kgraph.load_kg(str(tmpdir.join('source')))
    assert loaded.ids == kg.ids and loaded.kinds == kg.kinds
    assert loaded.triples == kg.triples
    numpy.testing.assert_allclose(loaded.features, kg.features)
    with open(tsv_path) as f:
        assert sum(1 for _ in f) == len(kg.triples)


def test_load_kg_malformed_relation_raises_conflation_error(tmpdir):
    """
    Assert that an unknown relation name in the TSV file is rejected.
    """
    kg = kgraph.KnowledgeGraph(['a', 'b'], [geom.POLYGON] * 2, [('a', R.Top, 'b')], numpy.zeros((2, 1)))
    tsv_path, _ = kgraph.save_kg(kg, str(tmpdir.join('bad')))
    with open(tsv_path, 'w') as f:
        f.write('a\tAbove\tb\n')
    with pytest.raises(exceptions.ConflationError):
        kgraph.load_kg(str(tmpdir.join('bad')))
