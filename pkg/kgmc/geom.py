"""
    kgmc.geom
    ~~~~~~~~~

    Contains geometric primitives, segmentation of ways into segments, bounding rectangles
    and the area/distance measures used across the pipeline.
"""
import collections
import dataclasses
import functools
import logging
import math
import numbers
import typing

import numpy
import shapely
from shapely import geometry
from shapely.errors import GEOSException

from . import config, exceptions, hints

__all__ = ['Point', 'Segment', 'PolyEntity', 'Mbr', 'Gdb', 'split_ways_into_segments', 'mbr', 'jaccard_area',
           'buffer_segment', 'hausdorff_distance', 'center_of', 'assemble_features', 'POLYGON', 'SEGMENT']

log = logging.getLogger(__name__)

#: Kind label of polygon entities.
POLYGON = 'polygon'

#: Kind label of linear segments.
SEGMENT = 'segment'

#: Feature columns that are min-max scaled per database.
SCALED_COLUMNS = ('x', 'y', 'size')


@dataclasses.dataclass(frozen=True)
class Point:
    """
    Planar point in map units.
    """
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise exceptions.GeometryError('Point coordinates must be finite; got ({}, {})'.format(self.x, self.y))

    def as_tuple(self) -> hints.Coordinate:
        return self.x, self.y


def _points(coords: hints.PointSeq) -> typing.Tuple[Point, ...]:
    return tuple(c if isinstance(c, Point) else Point(float(c[0]), float(c[1])) for c in coords)


@dataclasses.dataclass(frozen=True)
class Segment:
    """
    Polyline between two terminal points of a road network.
    """
    id: str
    points: typing.Tuple[Point, ...]
    way_id: str

    def __post_init__(self):
        object.__setattr__(self, 'points', _points(self.points))
        if len(self.points) < 2:
            raise exceptions.GeometryError('Segment {} needs at least two points'.format(self.id))
        for first, second in zip(self.points, self.points[1:]):
            if first == second:
                raise exceptions.GeometryError(
                    'Segment {} repeats consecutive point {}'.format(self.id, first.as_tuple()))

    @property
    def kind(self) -> hints.Str:
        return SEGMENT

    @property
    def coords(self) -> typing.List[hints.Coordinate]:
        return [p.as_tuple() for p in self.points]

    @functools.cached_property
    def line(self) -> geometry.LineString:
        return geometry.LineString(self.coords)

    @functools.cached_property
    def center(self) -> Point:
        """
        Midpoint along the polyline.
        """
        mid = self.line.interpolate(0.5, normalized=True)
        return Point(mid.x, mid.y)

    @property
    def length(self) -> hints.Float:
        return self.line.length


@dataclasses.dataclass(frozen=True)
class PolyEntity:
    """
    Non-linear entity described by a closed outer ring.
    """
    id: str
    ring: typing.Tuple[Point, ...]
    center: Point

    @classmethod
    def from_coords(cls, entity_id: hints.Str, coords: hints.PointSeq) -> 'PolyEntity':
        """
        Create a :class:`~kgmc.geom.PolyEntity` from ring coordinates, closing the ring if needed.

        :param entity_id: Identifier of the entity
        :type entity_id: :class:`~str`
        :param coords: Ring coordinates, open or closed
        :type coords: :class:`~list`
        :return: Polygon entity with its centroid as center
        :rtype: :class:`~kgmc.geom.PolyEntity`
        :raises :class:`~kgmc.exceptions.GeometryError`: When the ring is degenerate or self-intersecting
        """
        ring = list(_points(coords))
        if ring and ring[0] != ring[-1]:
            ring.append(ring[0])
        if len(set(ring)) < 3:
            raise exceptions.GeometryError('Polygon {} needs at least three distinct vertices'.format(entity_id))
        polygon = geometry.Polygon([p.as_tuple() for p in ring])
        if not polygon.is_valid or polygon.area <= 0:
            raise exceptions.GeometryError('Polygon {} is self-intersecting or has no area'.format(entity_id))
        centroid = polygon.centroid
        return cls(entity_id, tuple(ring), Point(centroid.x, centroid.y))

    @property
    def kind(self) -> hints.Str:
        return POLYGON

    @property
    def coords(self) -> typing.List[hints.Coordinate]:
        return [p.as_tuple() for p in self.ring]

    @functools.cached_property
    def polygon(self) -> geometry.Polygon:
        return geometry.Polygon(self.coords)

    @property
    def area(self) -> hints.Float:
        return self.polygon.area


#: Type hint that defines any shape stored in a :class:`~kgmc.geom.Gdb`.
Shape = typing.Union[PolyEntity, Segment]


@dataclasses.dataclass(frozen=True)
class Mbr:
    """
    Axis-aligned minimum bounding rectangle in normalized min/max form.
    """
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise exceptions.GeometryError('Invalid bounding rectangle {}'.format(self))

    @classmethod
    def from_bounds(cls, bounds: typing.Sequence[float]) -> 'Mbr':
        """
        Create from a shapely ``(minx, miny, maxx, maxy)`` bounds tuple.
        """
        min_x, min_y, max_x, max_y = bounds
        return cls(float(min_x), float(max_x), float(min_y), float(max_y))

    @property
    def width(self) -> hints.Float:
        return self.x_max - self.x_min

    @property
    def height(self) -> hints.Float:
        return self.y_max - self.y_min

    @property
    def area(self) -> hints.Float:
        return self.width * self.height

    @property
    def diagonal(self) -> hints.Float:
        return math.hypot(self.width, self.height)

    @property
    def center(self) -> Point:
        return Point((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def corners(self) -> typing.Tuple[Point, Point, Point, Point]:
        """
        Corner points counter-clockwise from the bottom-left one.
        """
        return (Point(self.x_min, self.y_min), Point(self.x_max, self.y_min),
                Point(self.x_max, self.y_max), Point(self.x_min, self.y_max))

    def contains_point(self, p: Point) -> hints.Bool:
        return self.x_min <= p.x <= self.x_max and self.y_min <= p.y <= self.y_max

    def intersects(self, other: 'Mbr') -> hints.Bool:
        """
        Closed intersection test; rectangles touching at an edge or corner intersect.
        """
        return (self.x_min <= other.x_max and other.x_min <= self.x_max and
                self.y_min <= other.y_max and other.y_min <= self.y_max)

    def overlap_area(self, other: 'Mbr') -> hints.Float:
        """
        Area shared by the two rectangles; zero when they only touch.
        """
        dx = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        dy = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        return max(dx, 0.0) * max(dy, 0.0)

    def inflate(self, radius: hints.Float) -> 'Mbr':
        return Mbr(self.x_min - radius, self.x_max + radius, self.y_min - radius, self.y_max + radius)

    def union(self, other: 'Mbr') -> 'Mbr':
        return Mbr(min(self.x_min, other.x_min), max(self.x_max, other.x_max),
                   min(self.y_min, other.y_min), max(self.y_max, other.y_max))

    def as_bounds(self) -> typing.Tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.x_max, self.y_max


def mbr(shape: Shape) -> Mbr:
    """
    Tightest axis-aligned rectangle containing every point of a shape.

    :param shape: Polygon entity or segment
    :type shape: :class:`~kgmc.geom.PolyEntity` or :class:`~kgmc.geom.Segment`
    :return: Bounding rectangle
    :rtype: :class:`~kgmc.geom.Mbr`
    """
    points = shape.ring if isinstance(shape, PolyEntity) else shape.points
    xs = [p.x for p in points]
    ys = [p.y for p in points]
    return Mbr(min(xs), max(xs), min(ys), max(ys))


def center_of(shape: Shape) -> Point:
    """
    Point used to place a shape in neighborhood grids: the centroid of a polygon, the midpoint of a segment.
    """
    return shape.center


def _as_geometry(shape) -> shapely.Geometry:
    if isinstance(shape, PolyEntity):
        return shape.polygon
    if isinstance(shape, Mbr):
        return geometry.box(*shape.as_bounds())
    return shape


@exceptions.reraise(GEOSException, exceptions.GeometryError, 'Polygon clipping failed')
def jaccard_area(a, b) -> hints.Float:
    """
    Ratio of the intersection area to the union area of two shapes.

    :param a: First shape; a :class:`~kgmc.geom.PolyEntity`, :class:`~kgmc.geom.Mbr` or shapely geometry
    :param b: Second shape
    :return: Jaccard index in [0, 1]; zero when the shapes are disjoint
    :rtype: :class:`~float`
    :raises :class:`~kgmc.exceptions.GeometryError`: When either shape has no area
    """
    first, second = _as_geometry(a), _as_geometry(b)
    if first.area <= 0 or second.area <= 0:
        raise exceptions.GeometryError('Jaccard similarity requires shapes with positive area')
    inter = first.intersection(second).area
    if inter <= 0:
        return 0.0
    union = first.union(second).area
    return min(1.0, inter / union)


def buffer_segment(s: Segment, lambda_buf: hints.Float, cap: hints.Str = 'round',
                   resolution: hints.Int = 8) -> geometry.Polygon:
    """
    Corridor of every point within ``lambda_buf / 2`` of a segment's polyline.

    :param s: Segment to buffer
    :type s: :class:`~kgmc.geom.Segment`
    :param lambda_buf: Full corridor width
    :type lambda_buf: :class:`~float`
    :param cap: End cap style, 'round' by default
    :type cap: :class:`~str`
    :param resolution: Segments per quarter circle of round caps and joins
    :type resolution: :class:`~int`
    :return: Corridor polygon
    :rtype: :class:`~shapely.geometry.Polygon`
    """
    if lambda_buf <= 0:
        raise exceptions.GeometryError('Buffer width must be strictly positive; got {}'.format(lambda_buf))
    return s.line.buffer(lambda_buf / 2.0, quad_segs=resolution, cap_style=cap, join_style='round')


def _line_like(points: hints.PointSeq) -> shapely.Geometry:
    coords = [p.as_tuple() if isinstance(p, Point) else (float(p[0]), float(p[1])) for p in points]
    if not coords:
        raise exceptions.GeometryError('Hausdorff distance requires non-empty point sequences')
    if len(set(coords)) == 1:
        return geometry.Point(coords[0])
    return geometry.LineString(coords)


def hausdorff_distance(a: hints.PointSeq, b: hints.PointSeq) -> hints.Float:
    """
    Symmetric Hausdorff distance between two polylines, taken from each vertex to the other polyline.

    :param a: First point sequence
    :type a: :class:`~list`
    :param b: Second point sequence
    :type b: :class:`~list`
    :return: Distance in map units
    :rtype: :class:`~float`
    """
    return float(shapely.hausdorff_distance(_line_like(a), _line_like(b)))


def _deviation_degrees(p: hints.Coordinate, first: hints.Coordinate, second: hints.Coordinate) -> hints.Float:
    """
    Deviation from straight continuation at ``p`` between its two incident edges.
    """
    v1 = numpy.subtract(first, p)
    v2 = numpy.subtract(second, p)
    cos = numpy.dot(v1, v2) / (numpy.linalg.norm(v1) * numpy.linalg.norm(v2))
    interior = math.degrees(math.acos(max(-1.0, min(1.0, float(cos)))))
    return 180.0 - interior


def split_ways_into_segments(ways: typing.Sequence[hints.PointSeq], cfg: config.GeoConfig,
                             way_ids: typing.Optional[typing.Sequence[str]] = None) -> typing.List[Segment]:
    """
    Split every way at its terminal points.

    A point is terminal when its incident-line count over all ways is 1, greater than 2, or exactly
    2 with a deviation from straight continuation above ``cfg.theta``. Way ends always close a segment.
    A way yielding one segment keeps the way id; otherwise segments are named ``<way_id>:<k>``.

    :param ways: Point sequences, one per way
    :type ways: :class:`~list`
    :param cfg: Geometric configuration
    :type cfg: :class:`~kgmc.config.GeoConfig`
    :param way_ids: Way identifiers; positions are used when omitted
    :type way_ids: :class:`~list` or :class:`~NoneType`
    :return: Segments in way order
    :rtype: :class:`~list`
    :raises :class:`~kgmc.exceptions.GeometryError`: When a way is too short or repeats a point
    """
    way_ids = [str(i) for i in range(len(ways))] if way_ids is None else [str(i) for i in way_ids]
    if len(way_ids) != len(ways):
        raise exceptions.GeometryError('Got {} way ids for {} ways'.format(len(way_ids), len(ways)))

    normalized = []
    for way_id, way in zip(way_ids, ways):
        coords = [p.as_tuple() if isinstance(p, Point) else (float(p[0]), float(p[1])) for p in way]
        if len(coords) < 2:
            raise exceptions.GeometryError('Way {} needs at least two points'.format(way_id))
        for i, (first, second) in enumerate(zip(coords, coords[1:])):
            if first == second:
                raise exceptions.GeometryError(
                    'Way {} repeats point {} at position {}'.format(way_id, first, i + 1))
        normalized.append(coords)

    incident = collections.defaultdict(list)
    for coords in normalized:
        for i, p in enumerate(coords):
            if i > 0:
                incident[p].append(coords[i - 1])
            if i < len(coords) - 1:
                incident[p].append(coords[i + 1])

    def is_terminal(p):
        neighbors = incident[p]
        if len(neighbors) != 2:
            return True
        return _deviation_degrees(p, neighbors[0], neighbors[1]) > cfg.theta

    segments = []
    for way_id, coords in zip(way_ids, normalized):
        cuts = [0] + [i for i in range(1, len(coords) - 1) if is_terminal(coords[i])] + [len(coords) - 1]
        pieces = [coords[start:end + 1] for start, end in zip(cuts, cuts[1:])]
        for k, piece in enumerate(pieces):
            segment_id = way_id if len(pieces) == 1 else '{}:{}'.format(way_id, k)
            segments.append(Segment(segment_id, piece, way_id))
    log.debug('Split %d ways into %d segments', len(normalized), len(segments))
    return segments


def _size(shape: Shape) -> hints.Float:
    return shape.area if isinstance(shape, PolyEntity) else shape.length


def _is_number(value) -> hints.Bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def build_vocabulary(properties: typing.Mapping[str, typing.Mapping[str, typing.Any]]) -> typing.Dict:
    """
    Record which property keys are numeric and the sorted categories of every other key.

    :param properties: Entity id to property mapping
    :type properties: :class:`~dict`
    :return: Vocabulary with ``numeric`` keys and ``categorical`` key to values
    :rtype: :class:`~dict`
    """
    values = collections.defaultdict(list)
    for props in properties.values():
        for key, value in props.items():
            if value is not None:
                values[key].append(value)
    numeric = sorted(k for k, vs in values.items() if all(_is_number(v) for v in vs))
    categorical = {k: sorted({str(v) for v in vs}) for k, vs in values.items() if k not in numeric}
    return {'numeric': numeric, 'categorical': dict(sorted(categorical.items()))}


def assemble_features(shapes: typing.Sequence[Shape],
                      properties: typing.Mapping[str, typing.Mapping[str, typing.Any]],
                      vocabulary: typing.Mapping, reference: typing.Optional[typing.Sequence[Shape]] = None
                      ) -> typing.Tuple[typing.Dict[str, numpy.ndarray], typing.List[str]]:
    """
    Build the raw feature vector of every shape.

    Columns are the center coordinates, a polygon/segment one-hot, the size (area or length), numeric
    properties, and a one-hot of categorical properties against the vocabulary. Coordinates, size and
    numeric properties are min-max scaled over the database, or over the ``reference`` shapes when
    given; columns constant over the scaling shapes scale to zero.

    :param shapes: Polygons and segments of one database
    :type shapes: :class:`~list`
    :param properties: Entity id to property mapping
    :type properties: :class:`~dict`
    :param vocabulary: Vocabulary from :func:`~kgmc.geom.build_vocabulary`
    :type vocabulary: :class:`~dict`
    :param reference: Shapes whose raw values fix the scaling, looked up in the same properties
    :type reference: :class:`~list` or :class:`~NoneType`
    :return: Feature vectors by id and the column names
    :rtype: :class:`~tuple`
    """
    numeric = list(vocabulary.get('numeric', ()))
    categorical = vocabulary.get('categorical', {})
    names = ['x', 'y', 'is_polygon', 'is_segment', 'size'] + numeric
    names += ['{}={}'.format(key, value) for key, values in categorical.items() for value in values]
    scaled = list(SCALED_COLUMNS) + numeric

    column = {name: i for i, name in enumerate(names)}

    def raw(rows):
        matrix = numpy.zeros((len(rows), len(names)))
        for row, shape in enumerate(rows):
            props = properties.get(shape.id, {})
            center = shape.center
            matrix[row, column['x']] = center.x
            matrix[row, column['y']] = center.y
            matrix[row, column['is_polygon' if shape.kind == POLYGON else 'is_segment']] = 1.0
            matrix[row, column['size']] = _size(shape)
            for key in numeric:
                value = props.get(key)
                matrix[row, column[key]] = float(value) if _is_number(value) else 0.0
            for key in categorical:
                name = '{}={}'.format(key, props.get(key))
                if name in column:
                    matrix[row, column[name]] = 1.0
        return matrix

    matrix = raw(shapes)
    bounds = raw(reference) if reference else matrix
    if len(bounds):
        for name in scaled:
            low, high = bounds[:, column[name]].min(), bounds[:, column[name]].max()
            col = matrix[:, column[name]]
            matrix[:, column[name]] = (col - low) / (high - low) if high > low else 0.0
    return {shape.id: matrix[row].copy() for row, shape in enumerate(shapes)}, names


@dataclasses.dataclass(frozen=True)
class Gdb:
    """
    Geospatial database: polygon entities, linear segments and a feature vector per id.
    """
    entities: typing.Tuple[PolyEntity, ...]
    segments: typing.Tuple[Segment, ...]
    features: typing.Dict[str, numpy.ndarray]
    feature_names: typing.Tuple[str, ...] = ()
    properties: typing.Dict[str, typing.Dict[str, typing.Any]] = dataclasses.field(default_factory=dict)
    vocabulary: typing.Dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'entities', tuple(self.entities))
        object.__setattr__(self, 'segments', tuple(self.segments))
        object.__setattr__(self, 'feature_names', tuple(self.feature_names))
        ids = self.ids
        duplicates = sorted(i for i, n in collections.Counter(ids).items() if n > 1)
        if duplicates:
            raise exceptions.GeometryError('Duplicate ids in database: {}'.format(duplicates[:10]))
        missing = [i for i in ids if i not in self.features]
        if missing:
            raise exceptions.GeometryError('Missing feature vectors for {}'.format(missing[:10]))
        dims = {numpy.shape(self.features[i]) for i in ids}
        if len(dims) > 1:
            raise exceptions.GeometryError('Feature vectors have mixed shapes {}'.format(sorted(dims)))

    @classmethod
    def build(cls, entities: typing.Sequence[PolyEntity], segments: typing.Sequence[Segment],
              properties: typing.Optional[typing.Mapping[str, typing.Mapping]] = None,
              vocabulary: typing.Optional[typing.Mapping] = None) -> 'Gdb':
        """
        Create a :class:`~kgmc.geom.Gdb` computing the feature vectors of every shape.

        :param entities: Polygon entities
        :type entities: :class:`~list`
        :param segments: Segments
        :type segments: :class:`~list`
        :param properties: Entity id to property mapping
        :type properties: :class:`~dict` or :class:`~NoneType`
        :param vocabulary: Vocabulary to encode against; built from the properties when omitted
        :type vocabulary: :class:`~dict` or :class:`~NoneType`
        :return: Database with features
        :rtype: :class:`~kgmc.geom.Gdb`
        """
        properties = {k: dict(v) for k, v in (properties or {}).items()}
        vocabulary = build_vocabulary(properties) if vocabulary is None else vocabulary
        shapes = list(entities) + list(segments)
        features, names = assemble_features(shapes, properties, vocabulary)
        return cls(tuple(entities), tuple(segments), features, tuple(names), properties, dict(vocabulary))

    @classmethod
    def empty(cls) -> 'Gdb':
        return cls.build((), ())

    @property
    def ids(self) -> typing.List[str]:
        return [e.id for e in self.entities] + [s.id for s in self.segments]

    @functools.cached_property
    def _by_id(self) -> typing.Dict[str, Shape]:
        shapes = {e.id: e for e in self.entities}
        shapes.update((s.id, s) for s in self.segments)
        return shapes

    def __contains__(self, entity_id) -> hints.Bool:
        return entity_id in self._by_id

    def __len__(self) -> hints.Int:
        return len(self.entities) + len(self.segments)

    def get(self, entity_id: hints.EntityId) -> Shape:
        """
        Look up a shape by id.

        :raises :class:`~kgmc.exceptions.UnknownEntityError`: When no shape has the id
        """
        try:
            return self._by_id[entity_id]
        except KeyError as ex:
            raise exceptions.UnknownEntityError('Unknown entity id {!r}'.format(entity_id)) from ex

    def kind(self, entity_id: hints.EntityId) -> hints.Str:
        return self.get(entity_id).kind

    @property
    def dimension(self) -> hints.Int:
        if not self.features:
            return len(self.feature_names)
        return int(numpy.size(next(iter(self.features.values()))))

    def feature_matrix(self, ids: typing.Optional[typing.Sequence[str]] = None) -> numpy.ndarray:
        ids = self.ids if ids is None else ids
        if not ids:
            return numpy.zeros((0, self.dimension))
        return numpy.vstack([numpy.asarray(self.features[i], dtype=float) for i in ids])

    def extent(self) -> typing.Optional[Mbr]:
        """
        Bounding rectangle of every shape, or `None` for an empty database.
        """
        boxes = [mbr(s) for s in list(self.entities) + list(self.segments)]
        return functools.reduce(Mbr.union, boxes) if boxes else None
