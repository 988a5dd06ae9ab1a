"""
    kgmc.index
    ~~~~~~~~~~

    Contains the bulk-loaded spatial index answering closed bounding rectangle queries.
"""
import logging
import typing

import numpy
import shapely
from shapely import geometry

from . import exceptions, geom, hints

__all__ = ['SpatialIndex', 'build_index', 'query_box']

log = logging.getLogger(__name__)


def _envelope(box: geom.Mbr) -> shapely.Geometry:
    """
    Geometry whose envelope is exactly the rectangle, including rectangles collapsed to a line or point.
    """
    if box.width == 0 and box.height == 0:
        return geometry.Point(box.x_min, box.y_min)
    if box.width == 0 or box.height == 0:
        return geometry.LineString([(box.x_min, box.y_min), (box.x_max, box.y_max)])
    return geometry.box(*box.as_bounds())


class SpatialIndex:
    """
    Read-only packed R-tree over items keyed by bounding rectangles.
    """

    def __init__(self, items: typing.Sequence[typing.Tuple[str, geom.Mbr]]) -> None:
        """
        Create a new :class:`~kgmc.index.SpatialIndex` instance.

        :param items: Pairs of unique id and bounding rectangle
        :type items: :class:`~list`
        :raises :class:`~kgmc.exceptions.ConflationError`: When ids repeat
        """
        self._ids = tuple(str(i) for i, _ in items)
        self._boxes = tuple(box for _, box in items)
        if len(set(self._ids)) != len(self._ids):
            raise exceptions.ConflationError('Spatial index ids must be unique')
        self._tree = shapely.STRtree([_envelope(box) for box in self._boxes]) if self._boxes else None

    def __len__(self) -> hints.Int:
        return len(self._ids)

    def __repr__(self) -> hints.Str:
        return '<{}({} items)>'.format(self.__class__.__name__, len(self))

    def query(self, box: geom.Mbr) -> typing.List[str]:
        """
        Ids of every item whose rectangle intersects the box, in build order.

        :param box: Query rectangle
        :type box: :class:`~kgmc.geom.Mbr`
        :return: Matching ids
        :rtype: :class:`~list`
        """
        if self._tree is None:
            return []
        candidates = numpy.sort(self._tree.query(_envelope(box)))
        # STRtree compares envelopes; the exact closed test decides.
        return [self._ids[i] for i in candidates if self._boxes[i].intersects(box)]


def build_index(items: typing.Sequence[typing.Tuple[str, geom.Mbr]]) -> SpatialIndex:
    """
    Bulk load a :class:`~kgmc.index.SpatialIndex`.

    :param items: Pairs of unique id and bounding rectangle
    :type items: :class:`~list`
    :return: Spatial index
    :rtype: :class:`~kgmc.index.SpatialIndex`
    """
    index = SpatialIndex(items)
    log.debug('Built spatial index over %d items', len(index))
    return index


def query_box(idx: SpatialIndex, box: geom.Mbr) -> typing.Set[str]:
    """
    Ids of every item whose rectangle intersects the box, boundaries included.

    :param idx: Spatial index
    :type idx: :class:`~kgmc.index.SpatialIndex`
    :param box: Query rectangle
    :type box: :class:`~kgmc.geom.Mbr`
    :return: Matching ids
    :rtype: :class:`~set`
    """
    return set(idx.query(box))
