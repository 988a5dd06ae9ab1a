"""
    kgmc.metrics
    ~~~~~~~~~~~~

    Contains the evaluation measures: match accounting, cumulative normalized inconsistency,
    displacement of merged segments, dataset statistics and the grid/buffer width sweep.
"""
import csv
import dataclasses
import logging
import typing

import numpy
import shapely

from . import config, encoder, exceptions, geom, hints, index, kgraph, matcher

__all__ = ['MatchReport', 'CniReport', 'DatasetStats', 'SweepRow', 'match_report', 'heldout_report', 'cni',
           'cni_report', 'segment_polygon_overlaps', 'displacement_within', 'dataset_stats', 'mean_neighbors',
           'width_sweep', 'write_sweep', 'write_report_csv']

log = logging.getLogger(__name__)

#: Width parameters a sweep can vary.
SWEEP_PARAMETERS = ('grid', 'buffer')


@dataclasses.dataclass(frozen=True)
class MatchReport:
    """
    Match accounting against a ground-truth alignment.

    ``correct``, ``incorrect`` and ``missing`` are the true positive, false positive and false
    negative counts as fractions of the union of truth and prediction.
    """
    correct: float
    incorrect: float
    missing: float
    precision: float
    recall: float
    f1: float
    n_truth: int
    n_predicted: int

    def as_dict(self) -> typing.Dict[str, float]:
        return dataclasses.asdict(self)


def match_report(predicted: typing.Iterable[hints.IdPair], truth: typing.Iterable[hints.IdPair]) -> MatchReport:
    """
    Account predicted pairs against the ground truth.

    :param predicted: Predicted pairs, or a :class:`~kgmc.matcher.MatchSet`
    :type predicted: :class:`~collections.abc.Iterable`
    :param truth: Ground-truth pairs
    :type truth: :class:`~collections.abc.Iterable`
    :return: Report with precision 0 when nothing is predicted
    :rtype: :class:`~kgmc.metrics.MatchReport`
    :raises :class:`~kgmc.exceptions.MetricError`: When the ground truth is empty
    """
    if isinstance(predicted, matcher.MatchSet):
        predicted = predicted.id_pairs()
    predicted = {(str(s), str(t)) for s, t in predicted}
    truth = {(str(s), str(t)) for s, t in truth}
    if not truth:
        raise exceptions.MetricError('Cannot evaluate matching against an empty ground truth')

    true_positives = len(predicted & truth)
    false_positives = len(predicted - truth)
    false_negatives = len(truth - predicted)
    union = len(predicted | truth)
    precision = true_positives / len(predicted) if predicted else 0.0
    recall = true_positives / len(truth)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MatchReport(true_positives / union, false_positives / union, false_negatives / union,
                       precision, recall, f1, len(truth), len(predicted))


def heldout_report(predicted: typing.Iterable[hints.IdPair], truth: typing.Iterable[hints.IdPair],
                   training: typing.Iterable[hints.IdPair]) -> MatchReport:
    """
    Account only the pairs not exposed to training.

    Training pairs leave the ground truth, and predictions touching any id of a training pair are
    ignored.

    :param predicted: Predicted pairs, or a :class:`~kgmc.matcher.MatchSet`
    :type predicted: :class:`~collections.abc.Iterable`
    :param truth: Ground-truth pairs
    :type truth: :class:`~collections.abc.Iterable`
    :param training: Pairs used for training
    :type training: :class:`~collections.abc.Iterable`
    :return: Report over the held-out pairs
    :rtype: :class:`~kgmc.metrics.MatchReport`
    :raises :class:`~kgmc.exceptions.MetricError`: When no ground-truth pair is held out
    """
    if isinstance(predicted, matcher.MatchSet):
        predicted = predicted.id_pairs()
    training = set(training)
    seen_sources = {s for s, _ in training}
    seen_targets = {t for _, t in training}
    kept = [(s, t) for s, t in predicted if s not in seen_sources and t not in seen_targets]
    return match_report(kept, set(truth) - training)


def _polygon_overlaps(entities: typing.Sequence[geom.PolyEntity]) -> typing.Iterator[typing.Tuple[str, str, float]]:
    """
    Unordered pairs of polygons with a positive intersection area and their IoU.
    """
    idx = index.build_index([(e.id, geom.mbr(e)) for e in entities])
    by_id = {e.id: e for e in entities}
    order = {e.id: k for k, e in enumerate(entities)}
    for e in entities:
        for other_id in idx.query(geom.mbr(e)):
            if order[other_id] <= order[e.id]:
                continue
            other = by_id[other_id]
            overlap = shapely.intersection(e.polygon, other.polygon).area
            if overlap > 0:
                yield e.id, other_id, overlap / shapely.union(e.polygon, other.polygon).area


def cni(g: geom.Gdb) -> hints.Float:
    """
    Cumulative normalized inconsistency: the sum of intersection over union across every
    overlapping pair of polygons. Segments do not take part.

    :param g: Geospatial database
    :type g: :class:`~kgmc.geom.Gdb`
    :return: Non-negative total
    :rtype: :class:`~float`
    """
    return float(sum(iou for _, _, iou in _polygon_overlaps(g.entities)))


@dataclasses.dataclass(frozen=True)
class CniReport:
    """
    Inconsistency of a merged database against the inconsistency its source already had.
    """
    total: float
    source: float
    new: float
    new_percent: float

    def as_dict(self) -> typing.Dict[str, float]:
        return dataclasses.asdict(self)


def cni_report(source: geom.Gdb, merged: geom.Gdb) -> CniReport:
    total = cni(merged)
    baseline = cni(source)
    new = total - baseline
    return CniReport(total, baseline, new, 100.0 * new / total if total > 0 else 0.0)


def segment_polygon_overlaps(g: geom.Gdb) -> typing.List[hints.IdPair]:
    """
    (segment id, polygon id) pairs where a segment runs through the interior of a polygon.
    """
    idx = index.build_index([(e.id, geom.mbr(e)) for e in g.entities])
    by_id = {e.id: e for e in g.entities}
    pairs = []
    for s in g.segments:
        for polygon_id in idx.query(geom.mbr(s)):
            if shapely.intersection(s.line, by_id[polygon_id].polygon).length > 0:
                pairs.append((s.id, polygon_id))
    return pairs


def displacement_within(merged: geom.Gdb, original_targets: geom.Gdb, etas: typing.Sequence[float],
                        id_map: typing.Optional[typing.Mapping[str, str]] = None) -> typing.Dict[float, float]:
    """
    Fraction of merged segments whose Hausdorff distance to their original target geometry is at most
    each threshold.

    :param merged: Merged database
    :type merged: :class:`~kgmc.geom.Gdb`
    :param original_targets: Target database the added segments come from
    :type original_targets: :class:`~kgmc.geom.Gdb`
    :param etas: Distance thresholds
    :type etas: :class:`~list`
    :param id_map: Merged id to target id; ids are shared when omitted
    :type id_map: :class:`~dict` or :class:`~NoneType`
    :return: Threshold to fraction; 1.0 everywhere when no segment was added
    :rtype: :class:`~dict`
    """
    if id_map is None:
        id_map = {s.id: s.id for s in merged.segments if s.id in original_targets}
    distances = []
    for s in merged.segments:
        target_id = id_map.get(s.id)
        if target_id is None:
            continue
        original = original_targets.get(target_id)
        distances.append(geom.hausdorff_distance(s.coords, original.coords))
    if not distances:
        return {float(eta): 1.0 for eta in etas}
    distances = numpy.asarray(distances)
    return {float(eta): float(numpy.mean(distances <= eta)) for eta in etas}


class DatasetStats(typing.NamedTuple):
    ways: int
    terminal_nodes: int
    intermediate_nodes: int
    segments: int
    buildings: int


def dataset_stats(g: geom.Gdb) -> DatasetStats:
    """
    Count ways, terminal points, intermediate points, segments and buildings.

    Terminal points are the distinct segment endpoints; intermediate points are the distinct interior
    points of segments.
    """
    terminals, intermediates = set(), set()
    for s in g.segments:
        coords = s.coords
        terminals.update((coords[0], coords[-1]))
        intermediates.update(coords[1:-1])
    return DatasetStats(len({s.way_id for s in g.segments}), len(terminals), len(intermediates - terminals),
                        len(g.segments), len(g.entities))


def mean_neighbors(kg: kgraph.KnowledgeGraph, parameter: hints.Str = 'grid') -> hints.Float:
    """
    Mean neighbor count produced by one width: entities in the grid of each polygon for ``'grid'``,
    polygons inside the corridor of each segment for ``'buffer'``.

    :param kg: Knowledge graph
    :type kg: :class:`~kgmc.kgraph.KnowledgeGraph`
    :param parameter: ``'grid'`` or ``'buffer'``
    :type parameter: :class:`~str`
    :return: Mean count, 0 when there is nothing to count
    :rtype: :class:`~float`
    """
    if parameter not in SWEEP_PARAMETERS:
        raise exceptions.ConfigError('Unknown sweep parameter {!r}'.format(parameter))
    kind = geom.POLYGON if parameter == 'grid' else geom.SEGMENT
    relations = kgraph.GRID_RELATIONS if parameter == 'grid' else {kgraph.RelationType.Inside}
    heads = [i for i, k in zip(kg.ids, kg.kinds) if k == kind]
    if not heads:
        return 0.0
    tails = {i: set() for i in heads}
    for triple in kg.triples:
        if triple.rel in relations and triple.head in tails:
            tails[triple.head].add(triple.tail)
    return float(numpy.mean([len(t) for t in tails.values()]))


class SweepRow(typing.NamedTuple):
    width: float
    mean_neighbors: float
    precision: float
    recall: float
    f1: float


def width_sweep(g_s: geom.Gdb, g_t: geom.Gdb, training: typing.Sequence[hints.IdPair],
                truth: typing.Sequence[hints.IdPair], widths: typing.Sequence[float], cfg: config.PipelineConfig,
                parameter: hints.Str = 'grid') -> typing.List[SweepRow]:
    """
    Run the matching pipeline once per grid or buffer width.

    Each run rebuilds both knowledge graphs with the width, trains a fresh encoder on the training
    pairs, matches and scores the result against the truth.

    :param g_s: Source database
    :type g_s: :class:`~kgmc.geom.Gdb`
    :param g_t: Target database
    :type g_t: :class:`~kgmc.geom.Gdb`
    :param training: Pairs used for training
    :type training: :class:`~list`
    :param truth: Ground-truth pairs
    :type truth: :class:`~list`
    :param widths: Widths to evaluate, in order
    :type widths: :class:`~list`
    :param cfg: Pipeline configuration of every run
    :type cfg: :class:`~kgmc.config.PipelineConfig`
    :param parameter: ``'grid'`` varies the grid width, ``'buffer'`` the corridor width
    :type parameter: :class:`~str`
    :return: One row per width
    :rtype: :class:`~list`
    :raises :class:`~kgmc.exceptions.ConfigError`: When the parameter is unknown
    """
    if parameter not in SWEEP_PARAMETERS:
        raise exceptions.ConfigError('Unknown sweep parameter {!r}'.format(parameter))
    field = 'mu' if parameter == 'grid' else 'lambda_buf'
    rows = []
    for width in widths:
        geo = dataclasses.replace(cfg.geo, **{field: float(width)})
        kg_s = kgraph.build_knowledge_graph(g_s, geo)
        kg_t = kgraph.build_knowledge_graph(g_t, geo)
        model = encoder.train(kg_s, kg_t, training, cfg.train, g_s.vocabulary)
        matches = matcher.match_entities(g_s, g_t, model.embedding_set(kg_s, kg_t), cfg.match, geo)
        report = match_report(matches, truth)
        row = SweepRow(float(width), mean_neighbors(kg_s, parameter), report.precision, report.recall, report.f1)
        log.info('Sweep %s width %g: %.2f neighbors, F1 %.3f', parameter, width, row.mean_neighbors, row.f1)
        rows.append(row)
    return rows


def write_sweep(rows: typing.Sequence[SweepRow], path: hints.Str) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(SweepRow._fields)
        for row in rows:
            writer.writerow([repr(v) for v in row])


def write_report_csv(metrics: typing.Mapping[str, float], path: hints.Str) -> None:
    """
    Write flat ``metric,value`` rows.
    """
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(('metric', 'value'))
        for name, value in metrics.items():
            writer.writerow((name, value))
