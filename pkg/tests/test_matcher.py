"""
    test_matcher
    ~~~~~~~~~~~~

    Tests for the :mod:`~kgmc.matcher` module.
"""
import itertools

import numpy
import pytest

from kgmc import config, encoder, exceptions, geom, matcher


def square(entity_id, x, y, side=4.0):
    return geom.PolyEntity.from_coords(entity_id, [(x, y), (x + side, y), (x + side, y + side), (x, y + side)])


def brute_force_total(matrix):
    matrix = numpy.asarray(matrix)
    rows, cols = matrix.shape
    if rows <= cols:
        return max(sum(matrix[i, p[i]] for i in range(rows)) for p in itertools.permutations(range(cols), rows))
    return max(sum(matrix[p[j], j] for j in range(cols)) for p in itertools.permutations(range(rows), cols))


@pytest.fixture(scope='session', params=[(1, 1), (2, 3), (4, 4), (5, 3), (6, 6), (7, 5)])
def random_matrix(request):
    """
    Fixture that yields random score matrices of different shapes.
    """
    rows, cols = request.param
    return numpy.random.default_rng(rows * 10 + cols).uniform(size=(rows, cols))


@pytest.fixture(scope='session')
def scene():
    """
    Fixture that yields a source database of five squares and two segments.
    """
    entities = [square('b{}'.format(k), 10.0 * k, 0.0) for k in range(5)]
    segments = [geom.Segment('r0', [(0, 10), (40, 10)], 'r0'), geom.Segment('r1', [(0, 30), (40, 30)], 'r1')]
    return geom.Gdb.build(entities, segments)


def copy_of(g, prefix='t_', drop=(), shift=0.0):
    entities = [geom.PolyEntity.from_coords(prefix + e.id, [(x + shift, y) for x, y in e.coords])
                for e in g.entities if e.id not in drop]
    segments = [geom.Segment(prefix + s.id, [(x + shift, y) for x, y in s.coords], prefix + s.way_id)
                for s in g.segments if s.id not in drop]
    return geom.Gdb.build(entities, segments)


def identical_embeddings(g_s, g_t, prefix='t_'):
    rng = numpy.random.default_rng(0)
    vectors = {i: rng.normal(size=6) for i in g_s.ids}
    source = encoder.EmbeddingTable(tuple(g_s.ids), numpy.array([vectors[i] for i in g_s.ids]))
    target = encoder.EmbeddingTable(tuple(g_t.ids), numpy.array([vectors[i[len(prefix):]] for i in g_t.ids]))
    return encoder.EmbeddingSet(source, target)


def test_pair_similarity_identical_is_one(scene):
    """
    Assert that a shape compared with itself under identical embeddings scores 1.
    """
    embeddings = identical_embeddings(scene, copy_of(scene))
    target = copy_of(scene)
    assert matcher.pair_similarity(scene.get('b1'), target.get('t_b1'), embeddings, 0.5) == pytest.approx(1.0)
    assert matcher.pair_similarity(scene.get('r0'), target.get('t_r0'), embeddings, 0.5) == pytest.approx(1.0)


def test_pair_similarity_orthogonal_and_disjoint_is_quarter():
    """
    Assert that orthogonal embeddings of disjoint shapes score a quarter at tau 0.5.
    """
    a, b = square('a', 0, 0), square('b', 100, 100)
    embeddings = encoder.EmbeddingSet(encoder.EmbeddingTable(('a',), numpy.array([[1.0, 0.0]])),
                                      encoder.EmbeddingTable(('b',), numpy.array([[0.0, 1.0]])))
    assert matcher.pair_similarity(a, b, embeddings, 0.5) == pytest.approx(0.25)
    assert matcher.pair_similarity(a, b, embeddings, 1.0) == pytest.approx(0.5)
    assert matcher.pair_similarity(a, b, embeddings, 0.0) == pytest.approx(0.0)


def test_pair_similarity_blends_hand_computed_parts():
    """
    Assert that the score equals the weighted sum of rescaled cosine and Jaccard overlap.
    """
    a, b = square('a', 0, 0, side=1.0), square('b', 0.5, 0, side=1.0)
    embeddings = encoder.EmbeddingSet(encoder.EmbeddingTable(('a',), numpy.array([[1.0, 0.0]])),
                                      encoder.EmbeddingTable(('b',), numpy.array([[1.0, 1.0]])))
    sim_kg = (1.0 + 1.0 / numpy.sqrt(2.0)) / 2.0
    assert matcher.pair_similarity(a, b, embeddings, 0.3) == pytest.approx(0.3 * sim_kg + 0.7 / 3.0)


def test_pair_similarity_cross_kind_raises_matching_error(scene):
    """
    Assert that comparing a polygon with a segment raises :class:`~kgmc.exceptions.MatchingError`.
    """
    target = copy_of(scene)
    embeddings = identical_embeddings(scene, target)
    with pytest.raises(exceptions.MatchingError):
        matcher.pair_similarity(scene.get('b0'), target.get('t_r0'), embeddings, 0.5)


def test_assignment_identity():
    """
    Assert that an identity-like score matrix assigns the diagonal.
    """
    table = matcher.SimilarityTable.from_matrix(numpy.eye(4))
    assert [(m.source_id, m.target_id) for m in matcher.assignment(table)] == [(str(i), str(i)) for i in range(4)]


def test_assignment_two_by_two():
    """
    Assert that the 2x2 example picks the diagonal with total 1.7.
    """
    matches = matcher.assignment(matcher.SimilarityTable.from_matrix([[0.9, 0.1], [0.2, 0.8]]))
    assert [(m.source_id, m.target_id) for m in matches] == [('0', '0'), ('1', '1')]
    assert sum(m.score for m in matches) == pytest.approx(1.7)


def test_assignment_matches_brute_force(random_matrix):
    """
    Assert that the assignment is one-to-one and reaches the brute-force maximum total score.
    """
    matches = matcher.assignment(matcher.SimilarityTable.from_matrix(random_matrix))
    assert len(matches) == min(random_matrix.shape)
    assert len({m.source_id for m in matches}) == len({m.target_id for m in matches}) == len(matches)
    assert sum(m.score for m in matches) == pytest.approx(brute_force_total(random_matrix))


def test_assignment_benchmark(benchmark):
    """
    Assert that a benchmarked 200x150 assignment is one-to-one over every target.
    """
    matrix = numpy.random.default_rng(9).uniform(0.0, 1.0, size=(200, 150))
    table = matcher.SimilarityTable.from_matrix(matrix)
    matches = benchmark(matcher.assignment, table)
    assert len(matches) == 150
    assert len({m.source_id for m in matches}) == 150


def test_assignment_invariant_under_constant_shift():
    """
    Assert that adding a constant to every score of a square instance keeps the assignment.
    """
    matrix = numpy.random.default_rng(3).uniform(0, 0.5, size=(6, 6))
    first = matcher.assignment(matcher.SimilarityTable.from_matrix(matrix))
    second = matcher.assignment(matcher.SimilarityTable.from_matrix(matrix + 0.3))
    assert [(m.source_id, m.target_id) for m in first] == [(m.source_id, m.target_id) for m in second]


def test_assignment_skips_non_candidates():
    """
    Assert that pairs missing from a sparse table are never assigned.
    """
    table = matcher.SimilarityTable(('a', 'b'), ('x', 'y'), {('a', 'x'): 0.7})
    assert matcher.assignment(table) == [matcher.Match('a', 'x', 0.7)]
    assert matcher.assignment(matcher.SimilarityTable((), (), {})) == []


def test_similarity_table_rejects_scores_outside_unit_interval():
    """
    Assert that scores outside [0, 1] raise :class:`~kgmc.exceptions.MatchingError`.
    """
    with pytest.raises(exceptions.MatchingError):
        matcher.SimilarityTable.from_matrix([[1.2]])


def test_similarity_table_limits_candidates_to_radius(scene):
    """
    Assert that only pairs within the candidate radius are scored unless dense scoring is requested.
    """
    target = copy_of(scene)
    embeddings = identical_embeddings(scene, target)
    geo = config.GeoConfig()
    sparse = matcher.similarity_table(scene.entities, target.entities, embeddings,
                                      config.MatchConfig(candidate_radius=3.0), geo)
    assert set(sparse.scores) == {('b{}'.format(k), 't_b{}'.format(k)) for k in range(5)}
    assert sparse.radius == 3.0
    dense = matcher.similarity_table(scene.entities, target.entities, embeddings, config.MatchConfig(dense=True), geo)
    assert len(dense) == 25 and dense.radius is None


def test_match_entities_on_exact_copy_is_identity(scene):
    """
    Assert that matching a database against an exact copy pairs every id with its copy.
    """
    target = copy_of(scene)
    result = matcher.match_entities(scene, target, identical_embeddings(scene, target), config.MatchConfig(),
                                    config.GeoConfig())
    assert result.id_pairs() == {(i, 't_' + i) for i in scene.ids}
    assert result.unmatched_source == () and result.unmatched_target == ()


def test_match_entities_leaves_dropped_entities_unmatched(scene):
    """
    Assert that source entities whose copies were removed stay unmatched.
    """
    target = copy_of(scene, drop=('b1', 'b3', 'r1'))
    result = matcher.match_entities(scene, target, identical_embeddings(scene, target), config.MatchConfig(),
                                    config.GeoConfig())
    assert result.unmatched_source == ('b1', 'b3', 'r1')
    assert result.id_pairs() == {(i, 't_' + i) for i in ('b0', 'b2', 'b4', 'r0')}
    assert all(m.score >= 0.5 for m in result.pairs)


def test_match_entities_never_pairs_across_kinds(scene):
    """
    Assert that polygons are only matched with polygons and segments with segments.
    """
    target = copy_of(scene, shift=1.0)
    result = matcher.match_entities(scene, target, identical_embeddings(scene, target),
                                    config.MatchConfig(threshold=0.0, dense=True), config.GeoConfig())
    for m in result.pairs:
        assert scene.kind(m.source_id) == target.kind(m.target_id)


@pytest.fixture(scope='function')
def fixed_tables(mocker):
    """
    Fixture that makes the polygon similarity table a fixed 2x2 table where pre and post filtering disagree.
    """
    polygons = matcher.SimilarityTable(('a', 'b'), ('x', 'y'),
                                       {('a', 'x'): 0.6, ('a', 'y'): 0.55, ('b', 'x'): 0.45, ('b', 'y'): 0.0})
    segments = matcher.SimilarityTable((), (), {})
    mocker.patch('kgmc.matcher.similarity_table', side_effect=[polygons, segments])
    g_s = geom.Gdb.build([square('a', 0, 0), square('b', 10, 0)], [])
    g_t = geom.Gdb.build([square('x', 0, 0), square('y', 10, 0)], [])
    return g_s, g_t


def test_post_threshold_filters_after_assignment(fixed_tables):
    """
    Assert that post filtering keeps assigned pairs at or above the threshold.
    """
    g_s, g_t = fixed_tables
    result = matcher.match_entities(g_s, g_t, None, config.MatchConfig(threshold_mode='post'), config.GeoConfig())
    assert result.id_pairs() == {('a', 'y')}
    assert result.unmatched_source == ('b',) and result.unmatched_target == ('x',)


def test_pre_threshold_filters_candidates(fixed_tables):
    """
    Assert that pre filtering removes weak candidates before the assignment.
    """
    g_s, g_t = fixed_tables
    result = matcher.match_entities(g_s, g_t, None, config.MatchConfig(threshold_mode='pre'), config.GeoConfig())
    assert result.id_pairs() == {('a', 'x')}


def test_match_set_rejects_repeated_ids():
    """
    Assert that a match set pairing an id twice raises :class:`~kgmc.exceptions.MatchingError`.
    """
    with pytest.raises(exceptions.MatchingError):
        matcher.MatchSet((('a', 'x', 0.9), ('a', 'y', 0.8)), 0.5)


def test_saved_match_set_loads_back(tmpdir):
    """
    Assert that a match set written as CSV files loads with the same pairs and unmatched ids.
    """
    match_set = matcher.MatchSet((('a', 'x', 0.9), ('b', 'y', 0.75)), 0.5, ('c',), ('z', 'w'))
    paths = match_set.save(str(tmpdir))
    assert [p.rsplit('/', 1)[-1] for p in paths] == [matcher.MATCHES_CSV, matcher.UNMATCHED_SOURCE_CSV,
                                                     matcher.UNMATCHED_TARGET_CSV]
    loaded = matcher.MatchSet.load(str(tmpdir), 0.5)
    assert loaded == match_set


def test_load_match_set_missing_directory_raises_conflation_error(tmpdir):
    """
    Assert that loading from a directory without match files raises :class:`~kgmc.exceptions.ConflationError`.
    """
    with pytest.raises(exceptions.ConflationError):
        matcher.MatchSet.load(str(tmpdir.join('absent')))


def test_pair_files_round_trip(tmpdir):
    """
    Assert that alignment pairs written as CSV are read back in order.
    """
    path = str(tmpdir.join('alignment.csv'))
    matcher.write_pairs([('a', 'x'), ('b', 'y')], path)
    assert matcher.read_pairs(path) == [('a', 'x'), ('b', 'y')]
