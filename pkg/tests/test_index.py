"""
    test_index
    ~~~~~~~~~~

    Tests for the :mod:`~kgmc.index` module.
"""
import numpy
import pytest

from kgmc import exceptions, geom, index


@pytest.fixture(scope='session', params=[0, 1, 7, 250])
def random_items(request):
    """
    Fixture that yields random rectangles, some of them collapsed to lines or points.
    """
    rng = numpy.random.default_rng(request.param)
    items = []
    for k in range(request.param):
        x, y = rng.uniform(0, 100, size=2)
        w, h = rng.choice([0.0, 1.0, 5.0, 20.0], size=2)
        items.append(('i{}'.format(k), geom.Mbr(x, x + w, y, y + h)))
    return items


@pytest.fixture(scope='session')
def query_boxes():
    """
    Fixture that yields query rectangles covering empty, partial and full extents.
    """
    rng = numpy.random.default_rng(99)
    boxes = [geom.Mbr(-10, -5, -10, -5), geom.Mbr(-1000, 1000, -1000, 1000), geom.Mbr(50, 50, 50, 50)]
    for _ in range(20):
        x, y = rng.uniform(0, 100, size=2)
        w, h = rng.uniform(0, 30, size=2)
        boxes.append(geom.Mbr(x, x + w, y, y + h))
    return boxes


def test_query_matches_linear_scan(random_items, query_boxes):
    """
    Assert that :func:`~kgmc.index.query_box` returns exactly the ids a linear scan finds.
    """
    idx = index.build_index(random_items)
    assert len(idx) == len(random_items)
    for box in query_boxes:
        expected = {i for i, b in random_items if b.intersects(box)}
        assert index.query_box(idx, box) == expected


def test_query_includes_touching_boundaries():
    """
    Assert that rectangles sharing only an edge or a corner are returned.
    """
    idx = index.build_index([('edge', geom.Mbr(1, 2, 0, 1)), ('corner', geom.Mbr(1, 2, 1, 2)),
                             ('far', geom.Mbr(1.5, 2, 1.5, 2))])
    assert index.query_box(idx, geom.Mbr(0, 1, 0, 1)) == {'edge', 'corner'}


def test_query_returns_ids_in_build_order():
    """
    Assert that :meth:`~kgmc.index.SpatialIndex.query` lists ids in the order they were loaded.
    """
    items = [('c', geom.Mbr(0, 1, 0, 1)), ('a', geom.Mbr(0, 2, 0, 2)), ('b', geom.Mbr(0.5, 1, 0.5, 1))]
    assert index.build_index(items).query(geom.Mbr(0, 3, 0, 3)) == ['c', 'a', 'b']


def test_empty_index_returns_nothing():
    """
    Assert that an empty index answers every query with an empty set.
    """
    idx = index.build_index([])
    assert index.query_box(idx, geom.Mbr(0, 1, 0, 1)) == set()


def test_duplicate_ids_raise_conflation_error():
    """
    Assert that repeated ids are rejected.
    """
    with pytest.raises(exceptions.ConflationError):
        index.build_index([('a', geom.Mbr(0, 1, 0, 1)), ('a', geom.Mbr(2, 3, 2, 3))])


def test_query_benchmark(benchmark, random_items, query_boxes):
    """
    Benchmark querying every box against a bulk loaded index.
    """
    idx = index.build_index(random_items)
    benchmark(lambda: [index.query_box(idx, box) for box in query_boxes])
