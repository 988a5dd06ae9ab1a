"""
    kgmc.kgraph
    ~~~~~~~~~~~

    Contains knowledge graph construction from a :class:`~kgmc.geom.Gdb`, k-hop neighborhood queries
    and knowledge graph serialization.
"""
import collections
import concurrent.futures
import enum
import json
import logging
import math
import typing

import numpy
import shapely
from shapely import geometry

from . import config, exceptions, geom, hints, index

__all__ = ['RelationType', 'Triple', 'KnowledgeGraph', 'classify_grid_relation', 'build_knowledge_graph',
           'k_hop_neighbors', 'save_kg', 'load_kg', 'GRID_RELATIONS']

log = logging.getLogger(__name__)


class RelationType(enum.IntEnum):
    """
    Relation vocabulary of the knowledge graph; values are the serialized codes.
    """
    Bottom = 0
    BottomRight = 1
    Right = 2
    TopRight = 3
    Top = 4
    TopLeft = 5
    Left = 6
    BottomLeft = 7
    Close = 8
    Inside = 9
    Connected = 10


#: Relations assigned by the neighborhood grid of a polygon.
GRID_RELATIONS = frozenset(RelationType(code) for code in range(9))

#: Grid cell, indexed by (column, row) from bottom-left, to relation.
_CELLS = {
    (0, 0): RelationType.BottomLeft, (1, 0): RelationType.Bottom, (2, 0): RelationType.BottomRight,
    (0, 1): RelationType.Left, (1, 1): RelationType.Close, (2, 1): RelationType.Right,
    (0, 2): RelationType.TopLeft, (1, 2): RelationType.Top, (2, 2): RelationType.TopRight,
}


class Triple(typing.NamedTuple):
    """
    Directed, typed edge of the knowledge graph.
    """
    head: str
    rel: RelationType
    tail: str


def _cell(offset: hints.Float, mu: hints.Float) -> typing.Optional[int]:
    """
    Column or row of an offset inside a 3x3 grid of width ``mu``; `None` outside or on a threshold line.
    """
    inner, outer = mu / 6.0, mu / 2.0
    if -outer < offset < -inner:
        return 0
    if -inner < offset < inner:
        return 1
    if inner < offset < outer:
        return 2
    return None


def classify_grid_relation(e_center: geom.Point, u_center: geom.Point,
                           mu: hints.Float) -> typing.Optional[RelationType]:
    """
    Relation of ``u`` within the 3x3 grid of width ``mu`` centered on ``e``.

    Cells are split at offsets of +/- mu/6 and bounded at +/- mu/2 with strict inequalities, so a
    point outside the grid or exactly on a threshold line has no relation.

    :param e_center: Center of the polygon owning the grid
    :type e_center: :class:`~kgmc.geom.Point`
    :param u_center: Center of the neighbor
    :type u_center: :class:`~kgmc.geom.Point`
    :param mu: Grid width
    :type mu: :class:`~float`
    :return: Relation or `None`
    :rtype: :class:`~kgmc.kgraph.RelationType` or :class:`~NoneType`
    """
    if mu <= 0:
        raise exceptions.ConfigError('Grid width must be strictly positive; got {}'.format(mu))
    column = _cell(u_center.x - e_center.x, mu)
    row = _cell(u_center.y - e_center.y, mu)
    if column is None or row is None:
        return None
    return _CELLS[(column, row)]


class KnowledgeGraph:
    """
    Entities, typed triples and the feature matrix of one geospatial database.
    """

    def __init__(self, ids: typing.Sequence[str], kinds: typing.Sequence[str], triples: typing.Iterable[Triple],
                 features: numpy.ndarray, feature_names: typing.Sequence[str] = ()) -> None:
        """
        Create a new :class:`~kgmc.kgraph.KnowledgeGraph` instance.

        :param ids: Entity ids in row order
        :type ids: :class:`~list`
        :param kinds: Kind of each entity, polygon or segment
        :type kinds: :class:`~list`
        :param triples: Triples between known ids; duplicates are dropped
        :type triples: :class:`~collections.abc.Iterable`
        :param features: Feature matrix with one row per id
        :type features: :class:`~numpy.ndarray`
        :param feature_names: Feature column names
        :type feature_names: :class:`~list`
        :raises :class:`~kgmc.exceptions.UnknownEntityError`: When a triple names an unknown id
        """
        self.ids = tuple(ids)
        self.kinds = tuple(kinds)
        self.row = {entity_id: i for i, entity_id in enumerate(self.ids)}
        self.features = numpy.asarray(features, dtype=float).reshape(len(self.ids), -1)
        self.feature_names = tuple(feature_names)
        if len(self.row) != len(self.ids) or len(self.kinds) != len(self.ids):
            raise exceptions.ConflationError('Knowledge graph ids must be unique with one kind each')
        if not numpy.all(numpy.isfinite(self.features)):
            raise exceptions.ConflationError('Knowledge graph features must be finite')

        unique = set()
        for triple in triples:
            triple = Triple(str(triple[0]), RelationType(triple[1]), str(triple[2]))
            for entity_id in (triple.head, triple.tail):
                if entity_id not in self.row:
                    raise exceptions.UnknownEntityError('Triple {} names unknown id {!r}'.format(triple, entity_id))
            if triple.head == triple.tail:
                raise exceptions.ConflationError('Triple {} links an entity to itself'.format(triple))
            unique.add(triple)
        self.triples = tuple(sorted(unique, key=lambda t: (self.row[t.head], t.rel, self.row[t.tail])))

        self.buckets = collections.OrderedDict((r, []) for r in RelationType)
        self.adjacency = [set() for _ in self.ids]
        for triple in self.triples:
            self.buckets[triple.rel].append(triple)
            head, tail = self.row[triple.head], self.row[triple.tail]
            self.adjacency[head].add(tail)
            self.adjacency[tail].add(head)

    def __len__(self) -> hints.Int:
        return len(self.ids)

    def __repr__(self) -> hints.Str:
        return '<{}({} entities, {} triples)>'.format(self.__class__.__name__, len(self.ids), len(self.triples))

    def rows(self, ids: typing.Iterable[str]) -> typing.List[int]:
        """
        Row of every id.

        :raises :class:`~kgmc.exceptions.UnknownEntityError`: When an id is unknown
        """
        try:
            return [self.row[i] for i in ids]
        except KeyError as ex:
            raise exceptions.UnknownEntityError('Unknown entity id {}'.format(ex)) from ex

    def neighbors(self, entity_id: hints.EntityId) -> typing.Set[str]:
        """
        Ids linked to the entity by any triple, regardless of direction.
        """
        row, = self.rows([entity_id])
        return {self.ids[i] for i in self.adjacency[row]}

    def relation_counts(self) -> typing.Dict[str, int]:
        return {r.name: len(bucket) for r, bucket in self.buckets.items()}

    @property
    def dimension(self) -> hints.Int:
        return self.features.shape[1]


def _grid_triples(entity: geom.PolyEntity, centers: typing.Mapping[str, geom.Point],
                  center_index: index.SpatialIndex, mu: hints.Float) -> typing.List[Triple]:
    e = entity.center
    half = mu / 2.0
    window = geom.Mbr(e.x - half, e.x + half, e.y - half, e.y + half)
    triples = []
    for candidate in center_index.query(window):
        if candidate == entity.id:
            continue
        relation = classify_grid_relation(e, centers[candidate], mu)
        if relation is not None:
            triples.append(Triple(entity.id, relation, candidate))
    return triples


def _inside_triples(segment: geom.Segment, polygon_centers: typing.Mapping[str, geom.Point],
                    polygon_index: index.SpatialIndex, cfg: config.GeoConfig) -> typing.List[Triple]:
    corridor = geom.buffer_segment(segment, cfg.lambda_buf, cfg.buffer_cap, cfg.buffer_resolution)
    shapely.prepare(corridor)
    window = geom.Mbr.from_bounds(corridor.bounds)
    triples = []
    for candidate in polygon_index.query(window):
        center = polygon_centers[candidate]
        if corridor.covers(geometry.Point(center.x, center.y)):
            triples.append(Triple(segment.id, RelationType.Inside, candidate))
    return triples


def _endpoints_within(a: geom.Segment, b: geom.Segment, delta: hints.Float) -> hints.Bool:
    ends_a = (a.points[0], a.points[-1])
    ends_b = (b.points[0], b.points[-1])
    return any(math.hypot(p.x - q.x, p.y - q.y) <= delta for p in ends_a for q in ends_b)


def _connected_triples(segment: geom.Segment, segments: typing.Mapping[str, geom.Segment],
                       endpoint_index: index.SpatialIndex, delta: hints.Float) -> typing.List[Triple]:
    triples = []
    candidates = set()
    for end in (segment.points[0], segment.points[-1]):
        window = geom.Mbr(end.x - delta, end.x + delta, end.y - delta, end.y + delta)
        candidates.update(key.rpartition('@')[0] for key in endpoint_index.query(window))
    for candidate in sorted(candidates):
        if candidate != segment.id and _endpoints_within(segment, segments[candidate], delta):
            triples.append(Triple(segment.id, RelationType.Connected, candidate))
    return triples


def build_knowledge_graph(g: geom.Gdb, cfg: config.GeoConfig) -> KnowledgeGraph:
    """
    Build the knowledge graph of a database.

    Every polygon relates to each entity or segment whose center lies in its neighborhood grid. Every
    segment is Inside-linked to each polygon whose centroid lies in its corridor and Connected to each
    segment with an endpoint within ``cfg.delta`` of one of its own endpoints.

    :param g: Geospatial database
    :type g: :class:`~kgmc.geom.Gdb`
    :param cfg: Geometric configuration
    :type cfg: :class:`~kgmc.config.GeoConfig`
    :return: Knowledge graph whose rows follow the database id order
    :rtype: :class:`~kgmc.kgraph.KnowledgeGraph`
    """
    shapes = list(g.entities) + list(g.segments)
    centers = {s.id: geom.center_of(s) for s in shapes}
    center_index = index.build_index([(i, geom.Mbr(c.x, c.x, c.y, c.y)) for i, c in centers.items()])
    polygon_centers = {e.id: centers[e.id] for e in g.entities}
    polygon_index = index.build_index([(i, geom.Mbr(c.x, c.x, c.y, c.y)) for i, c in polygon_centers.items()])
    segments = {s.id: s for s in g.segments}
    endpoint_index = index.build_index([
        ('{}@{}'.format(s.id, k), geom.Mbr(p.x, p.x, p.y, p.y))
        for s in g.segments for k, p in enumerate((s.points[0], s.points[-1]))
    ])

    def emit(shape):
        if isinstance(shape, geom.PolyEntity):
            return _grid_triples(shape, centers, center_index, cfg.mu)
        return (_inside_triples(shape, polygon_centers, polygon_index, cfg) +
                _connected_triples(shape, segments, endpoint_index, cfg.delta))

    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            emitted = list(pool.map(emit, shapes))
    else:
        emitted = [emit(shape) for shape in shapes]

    kg = KnowledgeGraph(g.ids, [s.kind for s in shapes], (t for batch in emitted for t in batch),
                        g.feature_matrix(), g.feature_names)
    log.info('Built knowledge graph with %d entities and %d triples', len(kg), len(kg.triples))
    log.debug('Triples per relation: %s', kg.relation_counts())
    return kg


def k_hop_neighbors(kg: KnowledgeGraph, e: hints.EntityId, k: hints.Int) -> typing.Set[str]:
    """
    Entities at unweighted graph distance exactly ``k``, treating triples as undirected edges.

    :param kg: Knowledge graph
    :type kg: :class:`~kgmc.kgraph.KnowledgeGraph`
    :param e: Entity id
    :type e: :class:`~str`
    :param k: Hop count
    :type k: :class:`~int`
    :return: Ids at distance ``k``
    :rtype: :class:`~set`
    :raises :class:`~kgmc.exceptions.UnknownEntityError`: When the id is unknown
    """
    if k < 1:
        raise exceptions.ConfigError('Hop count must be at least 1; got {}'.format(k))
    start, = kg.rows([e])
    return {kg.ids[i] for i in hop_rows(kg.adjacency, start, k)}


def hop_rows(adjacency: typing.Sequence[typing.Set[int]], start: hints.Int, k: hints.Int) -> typing.Set[int]:
    """
    Rows at distance exactly ``k`` from ``start`` by breadth-first search.
    """
    seen = {start}
    frontier = {start}
    for _ in range(k):
        frontier = {n for row in frontier for n in adjacency[row]} - seen
        seen |= frontier
        if not frontier:
            break
    return frontier


def save_kg(kg: KnowledgeGraph, prefix: hints.Str) -> typing.Tuple[str, str]:
    """
    Write ``<prefix>.kg.tsv`` with one ``head<TAB>relation<TAB>tail`` line per triple and a
    ``<prefix>.kg.json`` sidecar holding the ids, kinds and feature matrix.

    :param kg: Knowledge graph
    :type kg: :class:`~kgmc.kgraph.KnowledgeGraph`
    :param prefix: Output path prefix
    :type prefix: :class:`~str`
    :return: Paths written
    :rtype: :class:`~tuple`
    """
    tsv_path, json_path = '{}.kg.tsv'.format(prefix), '{}.kg.json'.format(prefix)
    with open(tsv_path, 'w') as f:
        for triple in kg.triples:
            f.write('{}\t{}\t{}\n'.format(triple.head, triple.rel.name, triple.tail))
    sidecar = {
        'ids': list(kg.ids),
        'kinds': list(kg.kinds),
        'relations': {r.name: int(r) for r in RelationType},
        'feature_names': list(kg.feature_names),
        'features': [[float(v) for v in row] for row in kg.features],
    }
    with open(json_path, 'w') as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)
        f.write('\n')
    return tsv_path, json_path


def load_kg(prefix: hints.Str) -> KnowledgeGraph:
    """
    Read a knowledge graph written by :func:`~kgmc.kgraph.save_kg`.

    :param prefix: Path prefix
    :type prefix: :class:`~str`
    :return: Knowledge graph
    :rtype: :class:`~kgmc.kgraph.KnowledgeGraph`
    """
    tsv_path, json_path = '{}.kg.tsv'.format(prefix), '{}.kg.json'.format(prefix)
    try:
        with open(json_path, 'r') as f:
            sidecar = json.load(f)
        with open(tsv_path, 'r') as f:
            lines = [line.rstrip('\n').split('\t') for line in f if line.strip()]
    except (OSError, ValueError) as ex:
        raise exceptions.ConflationError('Unable to read knowledge graph {}: {}'.format(prefix, ex)) from ex
    try:
        triples = [Triple(head, RelationType[rel], tail) for head, rel, tail in lines]
    except (KeyError, ValueError) as ex:
        raise exceptions.ConflationError('Malformed triple in {}: {}'.format(tsv_path, ex)) from ex
    features = numpy.asarray(sidecar['features'], dtype=float).reshape(len(sidecar['ids']), -1)
    return KnowledgeGraph(sidecar['ids'], sidecar['kinds'], triples, features, sidecar.get('feature_names', ()))
