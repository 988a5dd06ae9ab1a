"""
    kgmc.synth
    ~~~~~~~~~~

    Contains the synthetic scene generator: buildings packed along a road lattice, the perturbation
    that derives a target database with a ground-truth alignment, and alignment splitting.
"""
import dataclasses
import logging
import typing

import numpy

from . import config, exceptions, geom, hints

__all__ = ['SCENE_FORMAT', 'generate_scene', 'perturb', 'withhold', 'split_alignment', 'lattice_ways']

log = logging.getLogger(__name__)

#: Format tag written into scene manifests.
SCENE_FORMAT = 'kgmc-scene'

BUILDING_USES = ('commercial', 'industrial', 'residential')
ROAD_CLASSES = ('primary', 'residential', 'secondary')
MAX_LEVELS = 6


def lattice_ways(spec: config.SceneSpec) -> typing.List[typing.Tuple[str, typing.List[hints.Coordinate]]]:
    """
    Horizontal then vertical ways spanning the scene, evenly spaced.

    Each way carries a point at every crossing with a perpendicular way and ``spec.shape_points``
    collinear points between consecutive crossings, so crossings are shared exactly.

    :param spec: Scene parameters
    :type spec: :class:`~kgmc.config.SceneSpec`
    :return: (way id, points) in id order
    :rtype: :class:`~list`
    """
    n_horizontal = (spec.n_ways + 1) // 2
    n_vertical = spec.n_ways // 2
    ys = [spec.extent * (k + 1) / (n_horizontal + 1) for k in range(n_horizontal)]
    xs = [spec.extent * (k + 1) / (n_vertical + 1) for k in range(n_vertical)]

    def stations(crossings):
        marks = [0.0] + list(crossings) + [spec.extent]
        values = []
        for lo, hi in zip(marks, marks[1:]):
            step = (hi - lo) / (spec.shape_points + 1)
            values.extend(lo + step * i for i in range(spec.shape_points + 1))
        values.append(spec.extent)
        return values

    ways = []
    for y in ys:
        ways.append([(x, y) for x in stations(xs)])
    for x in xs:
        ways.append([(x, y) for y in stations(ys)])
    return [('w{:02d}'.format(k), way) for k, way in enumerate(ways)]


def _clear_of_roads(box: geom.Mbr, ys: numpy.ndarray, xs: numpy.ndarray, clearance: hints.Float) -> hints.Bool:
    if len(ys) and numpy.any((ys > box.y_min - clearance) & (ys < box.y_max + clearance)):
        return False
    if len(xs) and numpy.any((xs > box.x_min - clearance) & (xs < box.x_max + clearance)):
        return False
    return True


def _clear_of_buildings(box: geom.Mbr, placed: numpy.ndarray, clearance: hints.Float) -> hints.Bool:
    if not len(placed):
        return True
    x_min, x_max, y_min, y_max = placed.T
    hit = ((x_min < box.x_max + clearance) & (box.x_min < x_max + clearance) &
           (y_min < box.y_max + clearance) & (box.y_min < y_max + clearance))
    return not numpy.any(hit)


def generate_scene(spec: config.SceneSpec,
                   geo: typing.Optional[config.GeoConfig] = None) -> typing.Tuple[geom.Gdb, typing.Dict]:
    """
    Generate rectangular buildings placed by rejection sampling between the ways of a road lattice.

    Buildings keep ``spec.clearance`` from each other and from every road center line, so no two
    buildings overlap. The same scene parameters always yield the same scene.

    :param spec: Scene parameters
    :type spec: :class:`~kgmc.config.SceneSpec`
    :param geo: Geometric configuration used to split ways into segments
    :type geo: :class:`~kgmc.config.GeoConfig` or :class:`~NoneType`
    :return: Scene database and its manifest
    :rtype: :class:`~tuple`
    :raises :class:`~kgmc.exceptions.SceneError`: When a building cannot be placed within ``spec.max_attempts``
    """
    geo = geo or config.GeoConfig()
    rng = numpy.random.default_rng(spec.seed)
    ways = lattice_ways(spec)
    segments = geom.split_ways_into_segments([w for _, w in ways], geo, [i for i, _ in ways]) if ways else []
    properties = {}
    way_classes = {way_id: ROAD_CLASSES[int(rng.integers(len(ROAD_CLASSES)))] for way_id, _ in ways}
    for segment in segments:
        properties[segment.id] = {'kind': 'road', 'highway': way_classes[segment.way_id]}

    ys = numpy.array([w[0][1] for _, w in ways if w[0][1] == w[-1][1]])
    xs = numpy.array([w[0][0] for _, w in ways if w[0][0] == w[-1][0]])
    placed = numpy.zeros((0, 4))
    entities = []
    low, high = spec.building_size
    for k in range(spec.n_buildings):
        for _ in range(spec.max_attempts):
            width, height = rng.uniform(low, high, size=2)
            x = rng.uniform(0.0, spec.extent - width)
            y = rng.uniform(0.0, spec.extent - height)
            box = geom.Mbr(x, x + width, y, y + height)
            if _clear_of_roads(box, ys, xs, spec.clearance) and _clear_of_buildings(box, placed, spec.clearance):
                break
        else:
            raise exceptions.SceneError('Could not place building {} of {} after {} attempts'.format(
                k + 1, spec.n_buildings, spec.max_attempts))
        placed = numpy.vstack([placed, [box.x_min, box.x_max, box.y_min, box.y_max]])
        entity_id = 'b{:04d}'.format(k)
        entities.append(geom.PolyEntity.from_coords(entity_id, [
            (box.x_min, box.y_min), (box.x_max, box.y_min), (box.x_max, box.y_max), (box.x_min, box.y_max)]))
        properties[entity_id] = {
            'kind': 'building',
            'use': BUILDING_USES[int(rng.integers(len(BUILDING_USES)))],
            'levels': int(rng.integers(1, MAX_LEVELS + 1)),
        }

    gdb = geom.Gdb.build(entities, segments, properties)
    manifest = {
        'format': SCENE_FORMAT,
        'spec': dataclasses.asdict(spec),
        'ways': {way_id: [list(p) for p in way] for way_id, way in ways},
        'buildings': {e.id: [list(c) for c in e.coords] for e in entities},
        'segments': {s.id: s.way_id for s in segments},
    }
    log.info('Generated scene with %d buildings, %d ways and %d segments', len(entities), len(ways), len(segments))
    return gdb, manifest


def _noisy(props: typing.Mapping, categories: typing.Mapping[str, typing.Sequence[str]],
           rng: numpy.random.Generator) -> typing.Dict:
    """
    Copy of a property map with one value changed: numbers move by one, categories switch to another value.
    """
    props = dict(props)
    keys = sorted(k for k in props if k != 'kind')
    if not keys:
        return props
    key = keys[int(rng.integers(len(keys)))]
    value = props[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        others = [c for c in categories.get(key, ()) if c != str(value)]
        if others:
            props[key] = others[int(rng.integers(len(others)))]
    else:
        props[key] = max(1, value + int(rng.choice((-1, 1))))
    return props


def _translate(coords: typing.Sequence[hints.Coordinate], offset: numpy.ndarray) -> typing.List[hints.Coordinate]:
    return [(x + float(offset[0]), y + float(offset[1])) for x, y in coords]


def perturb(g: geom.Gdb, spec: config.PerturbSpec) -> typing.Tuple[geom.Gdb, typing.List[hints.IdPair]]:
    """
    Derive a target database from a scene.

    Every polygon moves by its own Gaussian offset and every way by one offset shared by its segments,
    so shapes and way continuity survive. Polygons and segments are dropped independently, property
    values are altered at the metadata noise rate, and surviving ids get the target prefix.

    :param g: Scene database
    :type g: :class:`~kgmc.geom.Gdb`
    :param spec: Perturbation parameters
    :type spec: :class:`~kgmc.config.PerturbSpec`
    :return: Target database and the (source id, target id) alignment of every surviving shape
    :rtype: :class:`~tuple`
    """
    rng = numpy.random.default_rng(spec.seed)
    categories = g.vocabulary.get('categorical', {})
    prefix = spec.id_prefix
    entities, segments, properties, alignment = [], [], {}, []

    def carry(source_id, target_id):
        props = g.properties.get(source_id, {})
        if rng.random() < spec.metadata_noise_rate:
            props = _noisy(props, categories, rng)
        properties[target_id] = dict(props)
        alignment.append((source_id, target_id))

    for entity in g.entities:
        offset = rng.normal(0.0, spec.jitter_sigma, size=2)
        if rng.random() < spec.drop_rate_entities:
            continue
        target_id = prefix + entity.id
        entities.append(geom.PolyEntity.from_coords(target_id, _translate(entity.coords, offset)))
        carry(entity.id, target_id)

    way_offsets = {}
    for segment in g.segments:
        if segment.way_id not in way_offsets:
            way_offsets[segment.way_id] = rng.normal(0.0, spec.jitter_sigma, size=2)
        if rng.random() < spec.drop_rate_segments:
            continue
        target_id = prefix + segment.id
        segments.append(geom.Segment(target_id, _translate(segment.coords, way_offsets[segment.way_id]),
                                     prefix + segment.way_id))
        carry(segment.id, target_id)

    target = geom.Gdb.build(entities, segments, properties, g.vocabulary)
    log.info('Perturbed scene: kept %d of %d polygons and %d of %d segments', len(entities), len(g.entities),
             len(segments), len(g.segments))
    return target, alignment


def withhold(g: geom.Gdb, rate: hints.Float, rng: numpy.random.Generator) -> typing.Tuple[geom.Gdb, typing.Set[str]]:
    """
    Remove a random fraction of polygons and segments from a database.

    :param g: Database
    :type g: :class:`~kgmc.geom.Gdb`
    :param rate: Probability of removing each shape
    :type rate: :class:`~float`
    :param rng: Random generator
    :type rng: :class:`~numpy.random.Generator`
    :return: Remaining database, sharing the vocabulary, and the removed ids
    :rtype: :class:`~tuple`
    """
    removed = {i for i in g.ids if rng.random() < rate}
    kept = geom.Gdb.build([e for e in g.entities if e.id not in removed],
                          [s for s in g.segments if s.id not in removed],
                          {i: p for i, p in g.properties.items() if i not in removed}, g.vocabulary)
    return kept, removed


def split_alignment(alignment: typing.Sequence[hints.IdPair], fraction: hints.Float,
                    seed: hints.Seed) -> typing.Tuple[typing.List[hints.IdPair], typing.List[hints.IdPair]]:
    """
    Split an alignment into training and held-out pairs.

    :param alignment: Ground-truth pairs
    :type alignment: :class:`~list`
    :param fraction: Share of pairs used for training, rounded to the nearest count
    :type fraction: :class:`~float`
    :param seed: Seed of the shuffle
    :type seed: :class:`~int`
    :return: Training pairs and held-out pairs, both in alignment order
    :rtype: :class:`~tuple`
    :raises :class:`~kgmc.exceptions.ConfigError`: When the fraction lies outside [0, 1]
    """
    if not 0 <= fraction <= 1:
        raise exceptions.ConfigError('fraction must lie in [0, 1]; got {}'.format(fraction))
    alignment = list(alignment)
    n_train = int(round(fraction * len(alignment)))
    chosen = set(numpy.random.default_rng(seed).permutation(len(alignment))[:n_train].tolist())
    training = [p for k, p in enumerate(alignment) if k in chosen]
    heldout = [p for k, p in enumerate(alignment) if k not in chosen]
    return training, heldout
