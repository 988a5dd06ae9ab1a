"""
    kgmc.config
    ~~~~~~~~~~~

    Contains the configuration records for every pipeline stage and their INI file loading.
"""
import configparser
import dataclasses
import hashlib
import io
import logging
import typing

from . import exceptions, hints

__all__ = ['GeoConfig', 'TrainConfig', 'MatchConfig', 'MergeConfig', 'SceneSpec', 'PerturbSpec',
           'PathsConfig', 'PipelineConfig', 'load', 'parse_override']

log = logging.getLogger(__name__)


def _require(condition: hints.Bool, message: hints.Str, *args) -> None:
    if not condition:
        raise exceptions.ConfigError(message.format(*args))


@dataclasses.dataclass(frozen=True)
class GeoConfig:
    """
    Geometric parameters used for segmentation, knowledge graph construction and evaluation.
    """
    #: Deviation-from-straight angle in degrees above which a degree-2 point becomes terminal.
    theta: float = 45.0
    #: Circular error in map units used by the connectivity test.
    delta: float = 1.0
    #: Full width of the corridor drawn around a segment.
    lambda_buf: float = 20.0
    #: Side length of the neighborhood grid centered on a polygon.
    mu: float = 100.0
    #: Displacement thresholds used by the merged-segment metric.
    eta: typing.Tuple[float, ...] = (5.0, 10.0)
    #: Cap style of segment corridors: 'round', 'flat' or 'square'.
    buffer_cap: str = 'round'
    #: Number of segments used to approximate a quarter circle of a corridor.
    buffer_resolution: int = 8
    #: Number of threads used to emit triples.
    workers: int = 1

    def __post_init__(self):
        _require(self.delta > 0 and self.lambda_buf > 0 and self.mu > 0,
                 'delta, lambda_buf and mu must be strictly positive')
        _require(0 < self.theta < 180, 'theta must lie in (0, 180); got {}', self.theta)
        _require(len(self.eta) > 0 and all(e > 0 for e in self.eta), 'eta values must be strictly positive')
        _require(self.buffer_cap in ('round', 'flat', 'square'), 'Unknown buffer_cap {!r}', self.buffer_cap)
        _require(self.buffer_resolution >= 1, 'buffer_resolution must be at least 1')
        _require(self.workers >= 1, 'workers must be at least 1')


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """
    Hyperparameters of the graph encoder and its training loop.
    """
    lr: float = 0.001
    hidden_dim: int = 300
    #: Number of stacked encoder layers.
    layers: int = 2
    #: Hop distance of the multi-hop encoder.
    k: int = 2
    #: Weight of the negative term of the contrastive loss.
    beta: float = 1.0
    #: Weight of the relation-consistency loss.
    alpha: float = 0.1
    #: Distance a negative pair must reach before it stops contributing.
    margin: float = 1.0
    negatives_per_pair: int = 10
    dropout_rate: float = 0.2
    #: Hidden width of the mixer MLPs.
    mixer_hidden: int = 64
    epochs: int = 100
    seed: int = 0
    log_every: int = 10
    time_limit: typing.Optional[float] = None
    use_multi_hop: bool = True
    use_mixer: bool = True
    use_semantic: bool = True

    def __post_init__(self):
        _require(self.lr > 0, 'lr must be strictly positive; got {}', self.lr)
        _require(self.margin > 0, 'margin must be strictly positive; got {}', self.margin)
        _require(self.beta >= 0 and self.alpha >= 0, 'beta and alpha must be non-negative')
        _require(self.negatives_per_pair >= 1, 'negatives_per_pair must be at least 1')
        _require(self.hidden_dim >= 1 and self.layers >= 1 and self.k >= 1 and self.mixer_hidden >= 1,
                 'hidden_dim, layers, k and mixer_hidden must be at least 1')
        _require(0 <= self.dropout_rate < 1, 'dropout_rate must lie in [0, 1); got {}', self.dropout_rate)
        _require(self.epochs >= 0, 'epochs must be non-negative')
        _require(self.log_every >= 1, 'log_every must be at least 1')
        _require(self.time_limit is None or self.time_limit > 0, 'time_limit must be positive')


@dataclasses.dataclass(frozen=True)
class MatchConfig:
    """
    Parameters of similarity scoring and assignment.
    """
    #: Weight of the embedding similarity against the area similarity.
    tau: float = 0.5
    #: Minimum score of an accepted pair.
    threshold: float = 0.5
    #: Bounding rectangle gap under which pairs become candidates; defaults to the grid width.
    candidate_radius: typing.Optional[float] = None
    #: Score every source/target pair of the same kind.
    dense: bool = False
    #: Apply the threshold 'post' assignment or 'pre' assignment.
    threshold_mode: str = 'post'

    def __post_init__(self):
        _require(0 <= self.tau <= 1, 'tau must lie in [0, 1]; got {}', self.tau)
        _require(0 <= self.threshold <= 1, 'threshold must lie in [0, 1]; got {}', self.threshold)
        _require(self.candidate_radius is None or self.candidate_radius >= 0, 'candidate_radius must be >= 0')
        _require(self.threshold_mode in ('pre', 'post'), 'Unknown threshold_mode {!r}', self.threshold_mode)

    def radius(self, geo: GeoConfig) -> hints.Float:
        """
        Resolve the candidate radius against the grid width.

        :param geo: Geometric configuration
        :type geo: :class:`~kgmc.config.GeoConfig`
        :return: Candidate radius in map units
        :rtype: :class:`~float`
        """
        return geo.mu if self.candidate_radius is None else self.candidate_radius


@dataclasses.dataclass(frozen=True)
class MergeConfig:
    """
    Parameters of the non-overlap merge program and its branch-and-bound solver.
    """
    #: Weight of side shifts relative to center shifts.
    gamma: float = 2.1
    #: Bound on every shift component and on the total movement of each side.
    eps_max: float = 5.0
    #: Upper bound on any big-M constant; derived from the scene when unset.
    big_m: typing.Optional[float] = None
    #: Overlap depth tolerated between rectangles.
    contact_tolerance: float = 0.0
    #: Margin used to realize strict inequalities, in map units; must stay well above the LP tolerance.
    strict_slack: float = 1e-4
    int_tol: float = 1e-5
    lp_tol: float = 1e-6
    node_limit: int = 20000
    time_limit: typing.Optional[float] = None
    workers: int = 1
    #: Constrain segment bounding rectangles as well as polygons.
    include_segments: bool = True

    def __post_init__(self):
        _require(self.gamma > 0, 'gamma must be strictly positive; got {}', self.gamma)
        _require(self.eps_max > 0, 'eps_max must be strictly positive; got {}', self.eps_max)
        _require(self.big_m is None or self.big_m > 0, 'big_m must be strictly positive')
        _require(self.contact_tolerance >= 0, 'contact_tolerance must be non-negative')
        _require(self.strict_slack > 0, 'strict_slack must be strictly positive')
        _require(self.strict_slack > 10 * self.lp_tol, 'strict_slack {} must exceed ten times lp_tol {}',
                 self.strict_slack, self.lp_tol)
        _require(0 < self.int_tol < 0.5 and self.lp_tol > 0, 'int_tol must lie in (0, 0.5) and lp_tol be positive')
        _require(self.node_limit >= 1 and self.workers >= 1, 'node_limit and workers must be at least 1')
        _require(self.time_limit is None or self.time_limit > 0, 'time_limit must be positive')

    def resolve_big_m(self, extent: hints.Float) -> hints.Float:
        """
        Resolve the big-M constant for a scene and check that it dominates every coordinate difference.

        :param extent: Diagonal of the bounding rectangle of every shape involved
        :type extent: :class:`~float`
        :return: The big-M constant
        :rtype: :class:`~float`
        :raises :class:`~kgmc.exceptions.ConfigError`: When the configured value is too small
        """
        big_m = 10.0 * (extent + self.eps_max) if self.big_m is None else self.big_m
        _require(big_m > 2 * (extent + self.eps_max),
                 'big_m {} must exceed 2 * (scene extent {} + eps_max {})', big_m, extent, self.eps_max)
        return big_m


@dataclasses.dataclass(frozen=True)
class SceneSpec:
    """
    Parameters of a synthetic scene: buildings packed along a road lattice.
    """
    n_buildings: int = 50
    n_ways: int = 6
    extent: float = 500.0
    #: Range of building side lengths.
    building_size: typing.Tuple[float, float] = (12.0, 24.0)
    #: Free distance kept between buildings and from road center lines.
    clearance: float = 4.0
    #: Number of shape points inserted between road crossings.
    shape_points: int = 1
    max_attempts: int = 2000
    seed: int = 0

    def __post_init__(self):
        _require(self.n_buildings >= 0 and self.n_ways >= 0, 'counts must be non-negative')
        _require(self.extent > 0, 'extent must be strictly positive')
        _require(len(self.building_size) == 2 and 0 < self.building_size[0] <= self.building_size[1],
                 'building_size must be an increasing pair of positive lengths')
        _require(self.clearance >= 0 and self.shape_points >= 0, 'clearance and shape_points must be non-negative')
        _require(self.max_attempts >= 1, 'max_attempts must be at least 1')


@dataclasses.dataclass(frozen=True)
class PerturbSpec:
    """
    Parameters that derive a noisy target database from a scene.
    """
    jitter_sigma: float = 2.0
    drop_rate_entities: float = 0.1
    drop_rate_segments: float = 0.1
    metadata_noise_rate: float = 0.05
    #: Fraction of scene entities withheld from the source so they only exist in the target.
    source_drop_rate: float = 0.0
    #: Fraction of the ground-truth alignment exposed to training.
    train_fraction: float = 0.3
    id_prefix: str = 't_'
    seed: int = 1

    def __post_init__(self):
        _require(self.jitter_sigma >= 0, 'jitter_sigma must be non-negative')
        for name in ('drop_rate_entities', 'drop_rate_segments', 'metadata_noise_rate', 'source_drop_rate',
                     'train_fraction'):
            _require(0 <= getattr(self, name) <= 1, '{} must lie in [0, 1]', name)
        _require(bool(self.id_prefix), 'id_prefix must not be empty')


@dataclasses.dataclass(frozen=True)
class PathsConfig:
    """
    Locations of pipeline inputs and outputs.
    """
    workdir: str = '.'
    source: typing.Optional[str] = None
    target: typing.Optional[str] = None
    #: Ingestion manifest whose vocabulary is reused so feature dimensions line up.
    vocabulary: typing.Optional[str] = None
    #: Project lon/lat input to meters on ingestion.
    project: bool = False


#: Section name to record type of a :class:`~kgmc.config.PipelineConfig`.
SECTIONS = {
    'geo': GeoConfig,
    'train': TrainConfig,
    'match': MatchConfig,
    'merge': MergeConfig,
    'scene': SceneSpec,
    'perturb': PerturbSpec,
    'paths': PathsConfig,
}


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    """
    Configuration of every pipeline stage.
    """
    geo: GeoConfig = dataclasses.field(default_factory=GeoConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    match: MatchConfig = dataclasses.field(default_factory=MatchConfig)
    merge: MergeConfig = dataclasses.field(default_factory=MergeConfig)
    scene: SceneSpec = dataclasses.field(default_factory=SceneSpec)
    perturb: PerturbSpec = dataclasses.field(default_factory=PerturbSpec)
    paths: PathsConfig = dataclasses.field(default_factory=PathsConfig)

    def replace(self, section: hints.Str, **values) -> 'PipelineConfig':
        """
        Return a copy with the given fields of one section replaced.

        :param section: Section name
        :type section: :class:`~str`
        :return: Updated configuration
        :rtype: :class:`~kgmc.config.PipelineConfig`
        """
        updated = dataclasses.replace(getattr(self, section), **values)
        return dataclasses.replace(self, **{section: updated})

    def to_ini(self) -> hints.Str:
        """
        Render the configuration as INI text with every field spelled out.

        :return: INI document
        :rtype: :class:`~str`
        """
        parser = configparser.ConfigParser(interpolation=None)
        for section in SECTIONS:
            record = getattr(self, section)
            parser[section] = {f.name: _render(getattr(record, f.name)) for f in dataclasses.fields(record)}
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    def digest(self) -> hints.Str:
        """
        SHA-256 of the rendered configuration.

        :return: Hex digest
        :rtype: :class:`~str`
        """
        return hashlib.sha256(self.to_ini().encode('utf-8')).hexdigest()


def _render(value) -> hints.Str:
    if value is None:
        return ''
    if isinstance(value, tuple):
        return ', '.join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: hints.Str, annotation, where: hints.Str):
    """
    Convert INI text into the type named by a dataclass field annotation.
    """
    raw = raw.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union and type(None) in args:
        if raw == '' or raw.lower() == 'none':
            return None
        inner = next(a for a in args if a is not type(None))
        return _coerce(raw, inner, where)
    try:
        if origin is tuple:
            item_type = args[0]
            return tuple(item_type(part) for part in raw.split(',') if part.strip())
        if annotation is bool:
            lowered = raw.lower()
            if lowered in ('1', 'yes', 'true', 'on'):
                return True
            if lowered in ('0', 'no', 'false', 'off'):
                return False
            raise ValueError('not a boolean: {!r}'.format(raw))
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        return raw
    except ValueError as ex:
        raise exceptions.ConfigError('Invalid value for {}: {}'.format(where, ex)) from ex


def _apply(sections: typing.Mapping[str, typing.Mapping[str, str]], base: PipelineConfig) -> PipelineConfig:
    records = {}
    for name, values in sections.items():
        if name not in SECTIONS:
            raise exceptions.ConfigError('Unknown config section [{}]'.format(name))
        record_type = SECTIONS[name]
        type_hints = typing.get_type_hints(record_type)
        known = {f.name for f in dataclasses.fields(record_type)}
        parsed = {}
        for key, raw in values.items():
            if key not in known:
                raise exceptions.ConfigError('Unknown config key {}.{}'.format(name, key))
            parsed[key] = _coerce(raw, type_hints[key], '{}.{}'.format(name, key))
        records[name] = dataclasses.replace(records.get(name, getattr(base, name)), **parsed)
    return dataclasses.replace(base, **records)


def parse_override(text: hints.Str) -> typing.Tuple[str, str, str]:
    """
    Split a ``section.key=value`` override.

    :param text: Override text
    :type text: :class:`~str`
    :return: Section, key and raw value
    :rtype: :class:`~tuple`
    :raises :class:`~kgmc.exceptions.ConfigError`: When the text is malformed
    """
    target, sep, value = text.partition('=')
    section, dot, key = target.strip().partition('.')
    if not sep or not dot or not section or not key:
        raise exceptions.ConfigError('Override must look like section.key=value; got {!r}'.format(text))
    return section, key, value


def load(path: typing.Optional[str] = None, overrides: typing.Sequence[str] = ()) -> PipelineConfig:
    """
    Load a :class:`~kgmc.config.PipelineConfig` from an INI file and apply ``section.key=value`` overrides.

    :param path: INI file path or `None` for defaults
    :type path: :class:`~str` or :class:`~NoneType`
    :param overrides: Overrides applied after the file
    :type overrides: :class:`~list`
    :return: Validated configuration
    :rtype: :class:`~kgmc.config.PipelineConfig`
    :raises :class:`~kgmc.exceptions.ConfigError`: When the file is unreadable or a value is invalid
    """
    sections = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, 'r') as f:
                parser.read_file(f)
        except (OSError, configparser.Error) as ex:
            raise exceptions.ConfigError('Unable to read config {}: {}'.format(path, ex)) from ex
        for name in parser.sections():
            sections[name] = dict(parser[name])
        log.debug('Loaded config sections %s from %s', sorted(sections), path)
    for text in overrides:
        section, key, value = parse_override(text)
        sections.setdefault(section, {})[key] = value
    return _apply(sections, PipelineConfig())
