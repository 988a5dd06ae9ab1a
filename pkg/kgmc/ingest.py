"""
    kgmc.ingest
    ~~~~~~~~~~~

    Contains GeoJSON ingestion into a :class:`~kgmc.geom.Gdb`, the JSON database store and GeoJSON export.
"""
import collections
import json
import logging
import typing

import geojson
import numpy
import pyproj

from . import config, exceptions, geom, hints

__all__ = ['read_geojson', 'write_geojson', 'save_gdb', 'load_gdb', 'equirectangular', 'write_json']

log = logging.getLogger(__name__)

#: Format tag written into database stores.
GDB_FORMAT = 'kgmc-gdb'

#: Decimal places kept for coordinates written to GeoJSON.
PRECISION = 15


def write_json(payload, path: hints.Str) -> None:
    """
    Write JSON with sorted keys so reruns produce identical bytes.
    """
    with open(path, 'w') as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write('\n')


def equirectangular(lon0: hints.Float, lat0: hints.Float) -> pyproj.Transformer:
    """
    Transformer from WGS84 lon/lat to an equirectangular projection in meters centered on a point.

    :param lon0: Central meridian
    :type lon0: :class:`~float`
    :param lat0: Latitude of true scale
    :type lat0: :class:`~float`
    :return: Transformer taking (lon, lat) to (x, y)
    :rtype: :class:`~pyproj.Transformer`
    """
    crs = pyproj.CRS.from_proj4('+proj=eqc +lat_ts={} +lon_0={} +datum=WGS84 +units=m +no_defs'.format(lat0, lon0))
    return pyproj.Transformer.from_crs('EPSG:4326', crs, always_xy=True)


def _feature_id(feature, fallback: hints.Str) -> hints.Str:
    properties = feature.get('properties') or {}
    value = feature.get('id', properties.get('id'))
    return fallback if value is None else str(value)


def _flat_properties(feature) -> typing.Dict[str, typing.Any]:
    properties = feature.get('properties') or {}
    flat = {}
    for key, value in properties.items():
        if key in ('id', 'way_id'):
            continue
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        flat[key] = value
    return flat


def _collect(collection) -> typing.Tuple[list, list, list, dict, dict]:
    """
    Split a FeatureCollection into polygon rings and way point sequences.
    """
    polygons, ways, way_ids = [], [], []
    polygon_props, way_props = {}, {}
    for i, feature in enumerate(collection.get('features', ())):
        geometry = feature.get('geometry')
        if geometry is None:
            continue
        kind = geometry.get('type')
        coords = geometry.get('coordinates')
        if kind == 'Polygon':
            entity_id = _feature_id(feature, 'p{}'.format(i))
            polygons.append((entity_id, coords[0]))
            polygon_props[entity_id] = _flat_properties(feature)
        elif kind == 'LineString':
            way_id = _feature_id(feature, 'w{}'.format(i))
            ways.append(coords)
            way_ids.append(way_id)
            way_props[way_id] = _flat_properties(feature)
        elif kind == 'MultiLineString':
            way_id = _feature_id(feature, 'w{}'.format(i))
            for k, part in enumerate(coords):
                part_id = way_id if len(coords) == 1 else '{}.{}'.format(way_id, k)
                ways.append(part)
                way_ids.append(part_id)
                way_props[part_id] = _flat_properties(feature)
        else:
            log.warning('Skipping feature %d with unsupported geometry %s', i, kind)
    return polygons, ways, way_ids, polygon_props, way_props


def read_geojson(path: hints.Str, cfg: config.GeoConfig, project: hints.Bool = False,
                 vocabulary: typing.Optional[typing.Mapping] = None) -> typing.Tuple[geom.Gdb, typing.Dict]:
    """
    Read a GeoJSON FeatureCollection into a :class:`~kgmc.geom.Gdb`.

    LineString and MultiLineString features become ways that are split into segments; Polygon features
    contribute their outer ring. Feature properties become the numeric and categorical feature columns.

    :param path: GeoJSON file path
    :type path: :class:`~str`
    :param cfg: Geometric configuration
    :type cfg: :class:`~kgmc.config.GeoConfig`
    :param project: Project lon/lat coordinates to meters with an equirectangular projection
    :type project: :class:`~bool`
    :param vocabulary: Vocabulary from an earlier ingestion so feature columns line up
    :type vocabulary: :class:`~dict` or :class:`~NoneType`
    :return: Database and ingestion manifest
    :rtype: :class:`~tuple`
    :raises :class:`~kgmc.exceptions.GeometryError`: When a shape is invalid
    """
    try:
        with open(path, 'r') as f:
            collection = geojson.load(f)
    except (OSError, ValueError) as ex:
        raise exceptions.ConflationError('Unable to read GeoJSON {}: {}'.format(path, ex)) from ex

    polygons, ways, way_ids, polygon_props, way_props = _collect(collection)

    projection = None
    if project:
        points = [c for _, ring in polygons for c in ring] + [c for way in ways for c in way]
        if points:
            lon0, lat0 = numpy.mean(numpy.asarray(points, dtype=float)[:, :2], axis=0)
            transformer = equirectangular(float(lon0), float(lat0))
            polygons = [(i, [transformer.transform(c[0], c[1]) for c in ring]) for i, ring in polygons]
            ways = [[transformer.transform(c[0], c[1]) for c in way] for way in ways]
            projection = {'proj': 'eqc', 'lon_0': float(lon0), 'lat_ts': float(lat0)}

    entities = [geom.PolyEntity.from_coords(entity_id, ring) for entity_id, ring in polygons]
    segments = geom.split_ways_into_segments([[c[:2] for c in way] for way in ways], cfg, way_ids)
    properties = dict(polygon_props)
    properties.update((s.id, dict(way_props[s.way_id])) for s in segments)

    gdb = geom.Gdb.build(entities, segments, properties, vocabulary)
    manifest = {
        'source': str(path),
        'projection': projection,
        'vocabulary': gdb.vocabulary,
        'feature_names': list(gdb.feature_names),
        'counts': {'polygons': len(entities), 'ways': len(ways), 'segments': len(segments)},
    }
    log.info('Ingested %s: %d polygons, %d ways, %d segments', path, len(entities), len(ways), len(segments))
    return gdb, manifest


def _ways(gdb: geom.Gdb) -> 'collections.OrderedDict[str, typing.List[geom.Segment]]':
    ways = collections.OrderedDict()
    for segment in gdb.segments:
        ways.setdefault(segment.way_id, []).append(segment)
    return ways


def write_geojson(gdb: geom.Gdb, path: hints.Str) -> None:
    """
    Write a database as a FeatureCollection: one Polygon per entity and one LineString per way.

    Segments of a way are joined back in order, so reading the file with the same configuration
    reproduces the segments.

    :param gdb: Database to export
    :type gdb: :class:`~kgmc.geom.Gdb`
    :param path: Output path
    :type path: :class:`~str`
    """
    features = []
    for entity in gdb.entities:
        props = dict(gdb.properties.get(entity.id, {}))
        props['id'] = entity.id
        shape = geojson.Polygon([entity.coords], precision=PRECISION)
        features.append(geojson.Feature(id=entity.id, geometry=shape, properties=props))
    for way_id, segments in _ways(gdb).items():
        coords = list(segments[0].coords)
        for segment in segments[1:]:
            coords.extend(segment.coords[1:])
        props = dict(gdb.properties.get(segments[0].id, {}))
        props['id'] = way_id
        shape = geojson.LineString(coords, precision=PRECISION)
        features.append(geojson.Feature(id=way_id, geometry=shape, properties=props))
    with open(path, 'w') as f:
        geojson.dump(geojson.FeatureCollection(features), f, sort_keys=True)
        f.write('\n')


def save_gdb(gdb: geom.Gdb, path: hints.Str) -> None:
    """
    Store a database, including its feature vectors, as JSON.

    :param gdb: Database to store
    :type gdb: :class:`~kgmc.geom.Gdb`
    :param path: Output path
    :type path: :class:`~str`
    """
    payload = {
        'format': GDB_FORMAT,
        'entities': [{'id': e.id, 'ring': [list(c) for c in e.coords]} for e in gdb.entities],
        'segments': [{'id': s.id, 'way_id': s.way_id, 'points': [list(c) for c in s.coords]}
                     for s in gdb.segments],
        'properties': gdb.properties,
        'vocabulary': gdb.vocabulary,
        'feature_names': list(gdb.feature_names),
        'features': {i: [float(v) for v in gdb.features[i]] for i in gdb.ids},
    }
    write_json(payload, path)


def load_gdb(path: hints.Str) -> geom.Gdb:
    """
    Load a database stored by :func:`~kgmc.ingest.save_gdb`.

    :param path: Store path
    :type path: :class:`~str`
    :return: Database
    :rtype: :class:`~kgmc.geom.Gdb`
    :raises :class:`~kgmc.exceptions.ConflationError`: When the file is missing or not a database store
    """
    try:
        with open(path, 'r') as f:
            payload = json.load(f)
    except (OSError, ValueError) as ex:
        raise exceptions.ConflationError('Unable to read database {}: {}'.format(path, ex)) from ex
    if payload.get('format') != GDB_FORMAT:
        raise exceptions.ConflationError('{} is not a database store'.format(path))
    entities = [geom.PolyEntity.from_coords(e['id'], e['ring']) for e in payload['entities']]
    segments = [geom.Segment(s['id'], s['points'], s['way_id']) for s in payload['segments']]
    features = {i: numpy.asarray(v, dtype=float) for i, v in payload['features'].items()}
    return geom.Gdb(tuple(entities), tuple(segments), features, tuple(payload['feature_names']),
                    payload.get('properties', {}), payload.get('vocabulary', {}))
