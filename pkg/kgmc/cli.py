"""
    kgmc.cli
    ~~~~~~~~

    Contains the command line driver that runs one pipeline stage per subcommand against a work directory.
"""
import argparse
import json
import logging
import os
import sys
import typing

import geojson
import numpy
import pyproj
import scipy
import shapely

from . import __version__, config, encoder, exceptions, hints, ingest, kgraph, matcher, merger, metrics, synth

__all__ = ['main', 'build_parser', 'COMMANDS']

log = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

SOURCE_GDB = 'source.gdb.json'
TARGET_GDB = 'target.gdb.json'
ALIGNMENT_CSV = 'alignment.csv'
TRAIN_ALIGNMENT_CSV = 'train_alignment.csv'
HELDOUT_ALIGNMENT_CSV = 'heldout_alignment.csv'
CHECKPOINT = 'checkpoint.json'
TRAINING_LOG = 'training_log.csv'
EMBEDDINGS = 'embeddings.json'
MERGE_PLAN = 'merge_plan.json'
MERGE_LP = 'model.lp'
MERGED_GDB = 'merged.gdb.json'
MERGED_GEOJSON = 'merged.geojson'
POSITION_GDB = 'position.gdb.json'
REPORT_JSON = 'report.json'
REPORT_CSV = 'report.csv'
SWEEP_CSV = 'sweep.csv'


class Stage:
    """
    Work directory access for one subcommand; records every output it writes.
    """

    def __init__(self, command: hints.Str, cfg: config.PipelineConfig, workdir: hints.Str) -> None:
        self.command = command
        self.config = cfg
        self.workdir = workdir
        self.outputs = []

    def path(self, name: hints.Str) -> hints.Str:
        return os.path.join(self.workdir, name)

    def require(self, name: hints.Str) -> hints.Str:
        """
        Path of an input produced by an earlier stage.

        :raises :class:`~kgmc.exceptions.ConfigError`: When the input is missing
        """
        path = self.path(name)
        if not os.path.exists(path):
            raise exceptions.ConfigError('{} needs {}; run the stage that produces it first'.format(
                self.command, path))
        return path

    def output(self, name: hints.Str) -> hints.Str:
        self.outputs.append(name)
        return self.path(name)

    def load_pair(self):
        return ingest.load_gdb(self.require(SOURCE_GDB)), ingest.load_gdb(self.require(TARGET_GDB))


def _input(path: typing.Optional[str], what: hints.Str) -> hints.Str:
    if not path:
        raise exceptions.ConfigError('paths.{} is required'.format(what))
    if not os.path.exists(path):
        raise exceptions.ConfigError('Input {} does not exist'.format(path))
    return path


def _manifest_vocabulary(path: hints.Str) -> typing.Dict:
    """
    Vocabulary of an ingestion manifest, either a single manifest or the source entry of a pair.
    """
    try:
        with open(path, 'r') as f:
            payload = json.load(f)
    except (OSError, ValueError) as ex:
        raise exceptions.ConfigError('Unable to read manifest {}: {}'.format(path, ex)) from ex
    vocabulary = payload.get('vocabulary', payload.get('source', {}).get('vocabulary'))
    if vocabulary is None:
        raise exceptions.ConfigError('Manifest {} has no vocabulary'.format(path))
    return vocabulary


def run_ingest(stage: Stage, args: argparse.Namespace) -> None:
    cfg = stage.config
    vocabulary = None
    if cfg.paths.vocabulary:
        vocabulary = _manifest_vocabulary(_input(cfg.paths.vocabulary, 'vocabulary'))
    g_s, manifest_s = ingest.read_geojson(_input(cfg.paths.source, 'source'), cfg.geo, cfg.paths.project, vocabulary)
    g_t, manifest_t = ingest.read_geojson(_input(cfg.paths.target, 'target'), cfg.geo, cfg.paths.project,
                                          g_s.vocabulary)
    ingest.save_gdb(g_s, stage.output(SOURCE_GDB))
    ingest.save_gdb(g_t, stage.output(TARGET_GDB))
    ingest.write_json({'source': manifest_s, 'target': manifest_t}, stage.output('ingest.manifest.json'))


def run_synth(stage: Stage, args: argparse.Namespace) -> None:
    cfg = stage.config
    scene, manifest = synth.generate_scene(cfg.scene, cfg.geo)
    target, alignment = synth.perturb(scene, cfg.perturb)
    source, withheld = synth.withhold(scene, cfg.perturb.source_drop_rate,
                                      numpy.random.default_rng(cfg.perturb.seed + 1))
    alignment = [p for p in alignment if p[0] not in withheld]
    training, heldout = synth.split_alignment(alignment, cfg.perturb.train_fraction, cfg.perturb.seed)
    manifest['withheld'] = sorted(withheld)
    manifest['alignment'] = len(alignment)

    ingest.save_gdb(source, stage.output(SOURCE_GDB))
    ingest.save_gdb(target, stage.output(TARGET_GDB))
    ingest.write_geojson(source, stage.output('source.geojson'))
    ingest.write_geojson(target, stage.output('target.geojson'))
    ingest.write_json(manifest, stage.output('scene.manifest.json'))
    matcher.write_pairs(alignment, stage.output(ALIGNMENT_CSV))
    matcher.write_pairs(training, stage.output(TRAIN_ALIGNMENT_CSV))
    matcher.write_pairs(heldout, stage.output(HELDOUT_ALIGNMENT_CSV))


def run_build_kg(stage: Stage, args: argparse.Namespace) -> None:
    g_s, g_t = stage.load_pair()
    for prefix, g in (('source', g_s), ('target', g_t)):
        kg = kgraph.build_knowledge_graph(g, stage.config.geo)
        kgraph.save_kg(kg, stage.path(prefix))
        stage.outputs.extend(['{}.kg.tsv'.format(prefix), '{}.kg.json'.format(prefix)])


def _training_pairs(stage: Stage) -> typing.List[hints.IdPair]:
    name = TRAIN_ALIGNMENT_CSV if os.path.exists(stage.path(TRAIN_ALIGNMENT_CSV)) else ALIGNMENT_CSV
    return matcher.read_pairs(stage.require(name))


def run_train(stage: Stage, args: argparse.Namespace) -> None:
    for name in ('source.kg.tsv', 'target.kg.tsv'):
        stage.require(name)
    kg_s = kgraph.load_kg(stage.path('source'))
    kg_t = kgraph.load_kg(stage.path('target'))
    g_s = ingest.load_gdb(stage.require(SOURCE_GDB))
    model = encoder.train(kg_s, kg_t, _training_pairs(stage), stage.config.train, g_s.vocabulary)
    model.save(stage.output(CHECKPOINT))
    model.write_log(stage.output(TRAINING_LOG))
    model.embeddings.save(stage.output(EMBEDDINGS))


def run_match(stage: Stage, args: argparse.Namespace) -> None:
    g_s, g_t = stage.load_pair()
    embeddings = encoder.EmbeddingSet.load(stage.require(EMBEDDINGS))
    match_set = matcher.match_entities(g_s, g_t, embeddings, stage.config.match, stage.config.geo)
    stage.outputs.extend(os.path.basename(p) for p in match_set.save(stage.workdir))


def run_merge(stage: Stage, args: argparse.Namespace) -> None:
    g_s, g_t = stage.load_pair()
    stage.require(matcher.MATCHES_CSV)
    match_set = matcher.MatchSet.load(stage.workdir)
    cfg = stage.config.merge
    plan, merge_model = merger.plan_merge(g_s, g_t, match_set, cfg)
    with open(stage.output(MERGE_LP), 'w') as f:
        f.write(merge_model.model.to_lp_text())
    plan.save(stage.output(MERGE_PLAN))
    if not plan.optimal:
        raise exceptions.InfeasibleMergeError(
            'No shift within eps_max {} separates {} pair(s)'.format(cfg.eps_max, len(plan.infeasible_pairs)),
            plan.infeasible_pairs)
    merged = merger.apply_merge(g_s, g_t, match_set, plan)
    ingest.save_gdb(merged, stage.output(MERGED_GDB))
    ingest.write_geojson(merged, stage.output(MERGED_GEOJSON))
    ingest.save_gdb(merger.position_merge_baseline(g_s, g_t, match_set), stage.output(POSITION_GDB))


def evaluate(stage: Stage) -> typing.Dict[str, typing.Dict]:
    """
    Gather every report the work directory supports.
    """
    g_s, g_t = stage.load_pair()
    truth = matcher.read_pairs(stage.require(ALIGNMENT_CSV))
    match_set = matcher.MatchSet.load(stage.workdir) if os.path.exists(stage.path(matcher.MATCHES_CSV)) else None
    report = {'stats': {'source': metrics.dataset_stats(g_s)._asdict(), 'target': metrics.dataset_stats(g_t)._asdict()}}
    if match_set is not None:
        report['matching'] = metrics.match_report(match_set, truth).as_dict()
        if os.path.exists(stage.path(TRAIN_ALIGNMENT_CSV)):
            training = matcher.read_pairs(stage.path(TRAIN_ALIGNMENT_CSV))
            if set(truth) - set(training):
                report['heldout'] = metrics.heldout_report(match_set, truth, training).as_dict()
    if match_set is not None and os.path.exists(stage.path(MERGED_GDB)):
        merged = ingest.load_gdb(stage.path(MERGED_GDB))
        id_map = merger.added_ids(g_s, g_t, match_set)
        report['merge'] = metrics.cni_report(g_s, merged).as_dict()
        report['merge']['segment_polygon_overlaps'] = len(metrics.segment_polygon_overlaps(merged))
        within = metrics.displacement_within(merged, g_t, stage.config.geo.eta, id_map)
        report['displacement'] = {'{:g}'.format(eta): fraction for eta, fraction in within.items()}
        if os.path.exists(stage.path(POSITION_GDB)):
            position = ingest.load_gdb(stage.path(POSITION_GDB))
            report['position'] = metrics.cni_report(g_s, position).as_dict()
    return report


def _flatten(report: typing.Mapping, prefix: hints.Str = '') -> typing.Dict[str, float]:
    flat = {}
    for key, value in report.items():
        name = '{}{}'.format(prefix, key)
        if isinstance(value, typing.Mapping):
            flat.update(_flatten(value, name + '.'))
        else:
            flat[name] = value
    return flat


def run_eval(stage: Stage, args: argparse.Namespace) -> None:
    report = evaluate(stage)
    ingest.write_json(report, stage.output(REPORT_JSON))
    metrics.write_report_csv(_flatten(report), stage.output(REPORT_CSV))
    if 'matching' in report:
        log.info('Matching precision %.3f recall %.3f', report['matching']['precision'], report['matching']['recall'])
    if 'merge' in report:
        log.info('Merged CNI %.6f, new CNI %.6f', report['merge']['total'], report['merge']['new'])


def run_sweep(stage: Stage, args: argparse.Namespace) -> None:
    g_s, g_t = stage.load_pair()
    truth = matcher.read_pairs(stage.require(ALIGNMENT_CSV))
    rows = metrics.width_sweep(g_s, g_t, _training_pairs(stage), truth, args.widths, stage.config, args.parameter)
    metrics.write_sweep(rows, stage.output(SWEEP_CSV))


#: Subcommand name to stage runner.
COMMANDS = {
    'ingest': run_ingest,
    'synth': run_synth,
    'build-kg': run_build_kg,
    'train': run_train,
    'match': run_match,
    'merge': run_merge,
    'eval': run_eval,
    'sweep': run_sweep,
}


def versions() -> typing.Dict[str, str]:
    return {
        'kgmc': __version__,
        'numpy': numpy.__version__,
        'scipy': scipy.__version__,
        'shapely': shapely.__version__,
        'geojson': geojson.__version__,
        'pyproj': pyproj.__version__,
    }


def write_run_manifest(stage: Stage) -> None:
    """
    Write the resolved configuration and a manifest naming the config digest, seeds, versions and outputs.
    """
    cfg = stage.config
    with open(stage.path('{}.config.ini'.format(stage.command)), 'w') as f:
        f.write(cfg.to_ini())
    ingest.write_json({
        'command': stage.command,
        'config_sha256': cfg.digest(),
        'seeds': {'train': cfg.train.seed, 'scene': cfg.scene.seed, 'perturb': cfg.perturb.seed},
        'versions': versions(),
        'outputs': sorted(stage.outputs),
    }, stage.path('{}.run.json'.format(stage.command)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='kgmc', description='Match and merge two vector geospatial databases.')
    parser.add_argument('--version', action='version', version='%(prog)s {}'.format(__version__))
    parser.add_argument('-c', '--config', help='INI configuration file')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='override one configuration value; repeatable')
    parser.add_argument('-w', '--workdir', help='work directory holding every artifact (paths.workdir)')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='log debug detail')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='log warnings and errors only')

    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True
    commands.add_parser('ingest', help='read source and target GeoJSON into database stores')
    commands.add_parser('synth', help='generate a scene, its perturbed target and the ground truth')
    commands.add_parser('build-kg', help='build the knowledge graph of both databases')
    commands.add_parser('train', help='train the encoder and embed both graphs')
    commands.add_parser('match', help='match source and target entities')
    commands.add_parser('merge', help='add unmatched target shapes without overlaps')
    commands.add_parser('eval', help='report matching, inconsistency and displacement measures')
    sweep = commands.add_parser('sweep', help='rerun matching across grid or buffer widths')
    sweep.add_argument('--parameter', choices=metrics.SWEEP_PARAMETERS, default='grid')
    sweep.add_argument('--widths', type=float, nargs='+', required=True)
    return parser


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> hints.Int:
    """
    Run one subcommand.

    :param argv: Arguments without the program name; `sys.argv` when omitted
    :type argv: :class:`~list` or :class:`~NoneType`
    :return: Exit status: 0 on success, otherwise the ``exit_code`` of the raised error
    :rtype: :class:`~int`
    """
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        cfg = config.load(args.config, args.overrides)
        if args.workdir:
            cfg = cfg.replace('paths', workdir=args.workdir)
        os.makedirs(cfg.paths.workdir, exist_ok=True)
        stage = Stage(args.command, cfg, cfg.paths.workdir)
        try:
            COMMANDS[args.command](stage, args)
        finally:
            write_run_manifest(stage)
    except exceptions.InfeasibleMergeError as ex:
        log.error('%s failed: %s', args.command, ex)
        for pair in ex.pair_ids:
            log.error('Infeasible pair: %s', ' '.join(pair))
        return ex.exit_code
    except exceptions.ConflationError as ex:
        log.error('%s failed: %s', args.command, ex)
        return ex.exit_code
    return 0
