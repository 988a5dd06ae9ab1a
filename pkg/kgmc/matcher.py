"""
    kgmc.matcher
    ~~~~~~~~~~~~

    Contains pairwise similarity scoring, optimal one-to-one assignment and threshold filtering
    of source and target entities.
"""
import csv
import dataclasses
import logging
import os
import typing

import numpy
from scipy import optimize

from . import config, encoder, exceptions, geom, hints, index

__all__ = ['Match', 'SimilarityTable', 'MatchSet', 'pair_similarity', 'assignment', 'similarity_table',
           'match_entities', 'read_pairs', 'write_pairs']

log = logging.getLogger(__name__)

#: File names written by :meth:`~kgmc.matcher.MatchSet.save`.
MATCHES_CSV = 'matches.csv'
UNMATCHED_SOURCE_CSV = 'unmatched_source.csv'
UNMATCHED_TARGET_CSV = 'unmatched_target.csv'


class Match(typing.NamedTuple):
    """
    Accepted source/target pair with its similarity.
    """
    source_id: str
    target_id: str
    score: float


def _cosine(u: numpy.ndarray, v: numpy.ndarray) -> hints.Float:
    norm = numpy.linalg.norm(u) * numpy.linalg.norm(v)
    if norm == 0:
        return 0.0
    return float(numpy.clip(numpy.dot(u, v) / norm, -1.0, 1.0))


def _area_shape(shape: geom.Shape, geo: config.GeoConfig):
    if isinstance(shape, geom.Segment):
        return geom.buffer_segment(shape, geo.lambda_buf, geo.buffer_cap, geo.buffer_resolution)
    return shape


def pair_similarity(e_s: geom.Shape, e_t: geom.Shape, embeddings: encoder.EmbeddingSet, tau: hints.Float,
                    geo: typing.Optional[config.GeoConfig] = None) -> hints.Float:
    """
    Blend of embedding similarity and area overlap of a source and a target shape.

    The embedding part is the cosine similarity rescaled to [0, 1]; the area part is the Jaccard index
    of the polygons, or of the corridors of two segments.

    :param e_s: Source shape
    :type e_s: :class:`~kgmc.geom.PolyEntity` or :class:`~kgmc.geom.Segment`
    :param e_t: Target shape
    :type e_t: :class:`~kgmc.geom.PolyEntity` or :class:`~kgmc.geom.Segment`
    :param embeddings: Embeddings of both databases
    :type embeddings: :class:`~kgmc.encoder.EmbeddingSet`
    :param tau: Weight of the embedding similarity
    :type tau: :class:`~float`
    :param geo: Geometric configuration giving the corridor width
    :type geo: :class:`~kgmc.config.GeoConfig` or :class:`~NoneType`
    :return: Score in [0, 1]
    :rtype: :class:`~float`
    :raises :class:`~kgmc.exceptions.MatchingError`: When a segment is compared with a polygon
    """
    geo = geo or config.GeoConfig()
    return _score(e_s, e_t, embeddings, tau, geo, _area_shape(e_s, geo), _area_shape(e_t, geo))


def _score(e_s, e_t, embeddings, tau, geo, area_s, area_t) -> hints.Float:
    if e_s.kind != e_t.kind:
        raise exceptions.MatchingError('Cannot compare {} {} with {} {}'.format(e_s.kind, e_s.id, e_t.kind, e_t.id))
    sim_kg = (1.0 + _cosine(embeddings.source.vector(e_s.id), embeddings.target.vector(e_t.id))) / 2.0
    sim_area = geom.jaccard_area(area_s, area_t)
    return float(min(1.0, max(0.0, tau * sim_kg + (1.0 - tau) * sim_area)))


@dataclasses.dataclass(frozen=True)
class SimilarityTable:
    """
    Scores of candidate source/target pairs of one kind.
    """
    source_ids: typing.Tuple[str, ...]
    target_ids: typing.Tuple[str, ...]
    scores: typing.Dict[hints.IdPair, float]
    tau: float = 0.5
    #: Candidate radius used, `None` when every pair was scored.
    radius: typing.Optional[float] = None

    def __post_init__(self):
        for pair, score in self.scores.items():
            if not 0.0 <= score <= 1.0:
                raise exceptions.MatchingError('Score {} of {} lies outside [0, 1]'.format(score, pair))

    @classmethod
    def from_matrix(cls, matrix, source_ids: typing.Optional[typing.Sequence[str]] = None,
                    target_ids: typing.Optional[typing.Sequence[str]] = None) -> 'SimilarityTable':
        """
        Create a dense table from a score matrix; rows are sources and columns targets.
        """
        matrix = numpy.asarray(matrix, dtype=float)
        rows, cols = matrix.shape
        source_ids = tuple(source_ids or (str(i) for i in range(rows)))
        target_ids = tuple(target_ids or (str(j) for j in range(cols)))
        scores = {(source_ids[i], target_ids[j]): float(matrix[i, j]) for i in range(rows) for j in range(cols)}
        return cls(source_ids, target_ids, scores)

    def __len__(self) -> hints.Int:
        return len(self.scores)


def assignment(sim: SimilarityTable) -> typing.List[Match]:
    """
    One-to-one assignment maximizing the total similarity.

    Weights ``1 - score`` (1 for pairs that are not candidates) are padded to a square matrix and a
    minimum-weight perfect matching is solved. Assignments to padding or to non-candidate pairs are
    dropped.

    :param sim: Candidate scores
    :type sim: :class:`~kgmc.matcher.SimilarityTable`
    :return: Assigned pairs in source order
    :rtype: :class:`~list`
    """
    n_s, n_t = len(sim.source_ids), len(sim.target_ids)
    size = max(n_s, n_t)
    if size == 0 or not sim.scores:
        return []
    source_row = {i: k for k, i in enumerate(sim.source_ids)}
    target_col = {i: k for k, i in enumerate(sim.target_ids)}
    weights = numpy.ones((size, size))
    for (s, t), score in sim.scores.items():
        weights[source_row[s], target_col[t]] = 1.0 - score
    rows, cols = optimize.linear_sum_assignment(weights)
    matches = []
    for r, c in zip(rows, cols):
        if r < n_s and c < n_t:
            pair = (sim.source_ids[r], sim.target_ids[c])
            if pair in sim.scores:
                matches.append(Match(pair[0], pair[1], sim.scores[pair]))
    return matches


def similarity_table(sources: typing.Sequence[geom.Shape], targets: typing.Sequence[geom.Shape],
                     embeddings: encoder.EmbeddingSet, cfg: config.MatchConfig,
                     geo: config.GeoConfig) -> SimilarityTable:
    """
    Score candidate pairs of one kind.

    Candidates are pairs whose bounding rectangles lie within the candidate radius of each other
    along both axes, found with a spatial index; with ``cfg.dense`` every pair is scored.

    :param sources: Source shapes of one kind
    :type sources: :class:`~list`
    :param targets: Target shapes of the same kind
    :type targets: :class:`~list`
    :param embeddings: Embeddings of both databases
    :type embeddings: :class:`~kgmc.encoder.EmbeddingSet`
    :param cfg: Matching configuration
    :type cfg: :class:`~kgmc.config.MatchConfig`
    :param geo: Geometric configuration
    :type geo: :class:`~kgmc.config.GeoConfig`
    :return: Candidate scores
    :rtype: :class:`~kgmc.matcher.SimilarityTable`
    """
    radius = None if cfg.dense else cfg.radius(geo)
    area_t = {t.id: _area_shape(t, geo) for t in targets}
    target_by_id = {t.id: t for t in targets}
    target_index = index.build_index([(t.id, geom.mbr(t)) for t in targets]) if radius is not None else None
    scores = {}
    for s in sources:
        area_s = _area_shape(s, geo)
        if target_index is None:
            candidates = [t.id for t in targets]
        else:
            candidates = target_index.query(geom.mbr(s).inflate(radius))
        for t_id in candidates:
            scores[(s.id, t_id)] = _score(s, target_by_id[t_id], embeddings, cfg.tau, geo, area_s, area_t[t_id])
    return SimilarityTable(tuple(s.id for s in sources), tuple(t.id for t in targets), scores, cfg.tau, radius)


@dataclasses.dataclass(frozen=True)
class MatchSet:
    """
    Accepted one-to-one pairs and the ids left unmatched on either side.
    """
    pairs: typing.Tuple[Match, ...]
    threshold: float
    unmatched_source: typing.Tuple[str, ...] = ()
    unmatched_target: typing.Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'pairs', tuple(Match(*p) for p in self.pairs))
        sources = [p.source_id for p in self.pairs]
        targets = [p.target_id for p in self.pairs]
        if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
            raise exceptions.MatchingError('A match set must pair every id at most once')

    def __len__(self) -> hints.Int:
        return len(self.pairs)

    def id_pairs(self) -> typing.Set[hints.IdPair]:
        return {(p.source_id, p.target_id) for p in self.pairs}

    @property
    def matched_target_ids(self) -> typing.Set[str]:
        return {p.target_id for p in self.pairs}

    def save(self, directory: hints.Str) -> typing.List[str]:
        """
        Write ``matches.csv`` and the two unmatched id lists into a directory.

        :param directory: Output directory
        :type directory: :class:`~str`
        :return: Paths written
        :rtype: :class:`~list`
        """
        paths = [os.path.join(directory, name) for name in (MATCHES_CSV, UNMATCHED_SOURCE_CSV,
                                                             UNMATCHED_TARGET_CSV)]
        with open(paths[0], 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(Match._fields)
            writer.writerows((p.source_id, p.target_id, repr(p.score)) for p in self.pairs)
        for path, ids in zip(paths[1:], (self.unmatched_source, self.unmatched_target)):
            with open(path, 'w', newline='') as f:
                writer = csv.writer(f)
                writer.writerow(['id'])
                writer.writerows([i] for i in ids)
        return paths

    @classmethod
    def load(cls, directory: hints.Str, threshold: hints.Float = 0.0) -> 'MatchSet':
        """
        Read a match set written by :meth:`~kgmc.matcher.MatchSet.save`.
        """
        try:
            with open(os.path.join(directory, MATCHES_CSV), newline='') as f:
                pairs = [Match(r['source_id'], r['target_id'], float(r['score'])) for r in csv.DictReader(f)]
            unmatched = []
            for name in (UNMATCHED_SOURCE_CSV, UNMATCHED_TARGET_CSV):
                with open(os.path.join(directory, name), newline='') as f:
                    unmatched.append(tuple(r['id'] for r in csv.DictReader(f)))
        except (OSError, KeyError, ValueError) as ex:
            raise exceptions.ConflationError('Unable to read match set from {}: {}'.format(directory, ex)) from ex
        return cls(tuple(pairs), threshold, unmatched[0], unmatched[1])


def _by_kind(g: geom.Gdb) -> typing.Dict[str, typing.List[geom.Shape]]:
    return {geom.POLYGON: list(g.entities), geom.SEGMENT: list(g.segments)}


def match_entities(g_s: geom.Gdb, g_t: geom.Gdb, embeddings: encoder.EmbeddingSet,
                   cfg: config.MatchConfig, geo: config.GeoConfig) -> MatchSet:
    """
    Match the entities of two databases.

    Polygons and segments are assigned independently. With ``threshold_mode='post'`` assigned pairs
    scoring under the threshold are dropped after assignment; with ``'pre'`` candidates under the
    threshold are removed before it.

    :param g_s: Source database
    :type g_s: :class:`~kgmc.geom.Gdb`
    :param g_t: Target database
    :type g_t: :class:`~kgmc.geom.Gdb`
    :param embeddings: Embeddings of both databases from the trained encoder
    :type embeddings: :class:`~kgmc.encoder.EmbeddingSet`
    :param cfg: Matching configuration
    :type cfg: :class:`~kgmc.config.MatchConfig`
    :param geo: Geometric configuration
    :type geo: :class:`~kgmc.config.GeoConfig`
    :return: Accepted pairs and unmatched ids
    :rtype: :class:`~kgmc.matcher.MatchSet`
    """
    sources, targets = _by_kind(g_s), _by_kind(g_t)
    accepted = []
    for kind in (geom.POLYGON, geom.SEGMENT):
        table = similarity_table(sources[kind], targets[kind], embeddings, cfg, geo)
        if cfg.threshold_mode == 'pre':
            table = dataclasses.replace(table, scores={p: v for p, v in table.scores.items() if v >= cfg.threshold})
        assigned = assignment(table)
        kept = [m for m in assigned if m.score >= cfg.threshold]
        log.info('Matched %d of %d %s candidate pairs (%d assigned, %d under threshold %s)', len(kept),
                 len(table), kind, len(assigned), len(assigned) - len(kept), cfg.threshold)
        accepted.extend(kept)

    matched_s = {m.source_id for m in accepted}
    matched_t = {m.target_id for m in accepted}
    return MatchSet(tuple(accepted), cfg.threshold,
                    tuple(i for i in g_s.ids if i not in matched_s),
                    tuple(i for i in g_t.ids if i not in matched_t))


def write_pairs(pairs: typing.Iterable[hints.IdPair], path: hints.Str) -> None:
    """
    Write ``source_id,target_id`` rows.
    """
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['source_id', 'target_id'])
        writer.writerows(pairs)


def read_pairs(path: hints.Str) -> typing.List[hints.IdPair]:
    """
    Read ``source_id,target_id`` rows written by :func:`~kgmc.matcher.write_pairs`.

    :raises :class:`~kgmc.exceptions.ConflationError`: When the file is missing or malformed
    """
    try:
        with open(path, newline='') as f:
            return [(r['source_id'], r['target_id']) for r in csv.DictReader(f)]
    except (OSError, KeyError) as ex:
        raise exceptions.ConflationError('Unable to read pairs {}: {}'.format(path, ex)) from ex
