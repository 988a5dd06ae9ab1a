"""
    test_config
    ~~~~~~~~~~~

    Tests for the :mod:`~kgmc.config` module.
"""
import pytest

from kgmc import config, exceptions


@pytest.fixture(scope='session', params=[
    ('geo', {'mu': 0}),
    ('geo', {'theta': 180}),
    ('geo', {'buffer_cap': 'butt'}),
    ('train', {'dropout_rate': 1.0}),
    ('train', {'margin': 0}),
    ('match', {'tau': 1.5}),
    ('match', {'threshold_mode': 'during'}),
    ('merge', {'eps_max': 0}),
    ('merge', {'int_tol': 0.5}),
    ('merge', {'strict_slack': 1e-6}),
    ('merge', {'strict_slack': 1e-3, 'lp_tol': 1e-4}),
    ('perturb', {'drop_rate_entities': 1.1}),
    ('scene', {'building_size': (5.0, 2.0)}),
])
def invalid_values(request):
    """
    Fixture that yields (section, values) combinations rejected on construction.
    """
    return request.param


@pytest.fixture(scope='session', params=[
    'geo.mu',
    'mu=5',
    '.mu=5',
    'geo.=5',
])
def malformed_override(request):
    """
    Fixture that yields override strings that are not ``section.key=value``.
    """
    return request.param


@pytest.fixture(scope='function')
def ini_file(tmpdir):
    """
    Fixture that yields the path of a small INI configuration file.
    """
    path = tmpdir.join('pipeline.ini')
    path.write('[geo]\nmu = 60\neta = 2.5, 7.5\n\n[merge]\neps_max = 1.5\nbig_m = \n\n'
               '[train]\nuse_mixer = no\nepochs = 3\n')
    return str(path)


def test_defaults_match_documented_values():
    """
    Assert that a default pipeline configuration carries the documented defaults.
    """
    cfg = config.load()
    assert cfg.geo.theta == 45.0 and cfg.geo.mu == 100.0 and cfg.geo.lambda_buf == 20.0
    assert cfg.geo.eta == (5.0, 10.0)
    assert cfg.train.hidden_dim == 300 and cfg.train.k == 2 and cfg.train.alpha == 0.1
    assert cfg.match.tau == 0.5 and cfg.match.threshold_mode == 'post'
    assert cfg.merge.gamma == 2.1 and cfg.merge.big_m is None
    assert cfg.merge.strict_slack == 1e-4 and cfg.merge.strict_slack > 10 * cfg.merge.lp_tol


def test_invalid_values_raise_config_error(invalid_values):
    """
    Assert that out-of-range values raise :class:`~kgmc.exceptions.ConfigError`.
    """
    section, values = invalid_values
    with pytest.raises(exceptions.ConfigError):
        config.PipelineConfig().replace(section, **values)


def test_load_reads_ini_and_coerces_types(ini_file):
    """
    Assert that :func:`~kgmc.config.load` coerces INI text to every field type.
    """
    cfg = config.load(ini_file)
    assert cfg.geo.mu == 60.0
    assert cfg.geo.eta == (2.5, 7.5)
    assert cfg.merge.eps_max == 1.5 and cfg.merge.big_m is None
    assert cfg.train.use_mixer is False and cfg.train.epochs == 3


def test_overrides_apply_after_file(ini_file):
    """
    Assert that ``section.key=value`` overrides win over file values.
    """
    cfg = config.load(ini_file, ['geo.mu=80', 'match.dense=true'])
    assert cfg.geo.mu == 80.0
    assert cfg.match.dense is True


def test_unknown_section_raises_config_error():
    """
    Assert that an unknown section is rejected.
    """
    with pytest.raises(exceptions.ConfigError):
        config.load(overrides=['solver.nodes=5'])


def test_unknown_key_raises_config_error():
    """
    Assert that an unknown key of a known section is rejected.
    """
    with pytest.raises(exceptions.ConfigError):
        config.load(overrides=['geo.grid=5'])


def test_uncoercible_value_raises_config_error():
    """
    Assert that text that does not parse as the field type is rejected.
    """
    with pytest.raises(exceptions.ConfigError):
        config.load(overrides=['train.epochs=many'])


def test_missing_file_raises_config_error(tmpdir):
    """
    Assert that an unreadable configuration file raises :class:`~kgmc.exceptions.ConfigError`.
    """
    with pytest.raises(exceptions.ConfigError):
        config.load(str(tmpdir.join('absent.ini')))


def test_malformed_override_raises_config_error(malformed_override):
    """
    Assert that :func:`~kgmc.config.parse_override` rejects malformed overrides.
    """
    with pytest.raises(exceptions.ConfigError):
        config.parse_override(malformed_override)


def test_rendered_ini_loads_back_to_same_config(tmpdir):
    """
    Assert that the resolved configuration written next to outputs loads back unchanged.
    """
    cfg = config.load(overrides=['geo.eta=3.0, 4.0', 'paths.source=in.geojson', 'merge.time_limit=2.5'])
    path = tmpdir.join('resolved.ini')
    path.write(cfg.to_ini())
    assert config.load(str(path)) == cfg
    assert config.load(str(path)).digest() == cfg.digest()


def test_digest_changes_with_values():
    """
    Assert that the configuration digest differs when any value differs.
    """
    assert config.load().digest() != config.load(overrides=['train.seed=1']).digest()


def test_candidate_radius_defaults_to_grid_width():
    """
    Assert that :meth:`~kgmc.config.MatchConfig.radius` falls back to the grid width.
    """
    geo = config.GeoConfig(mu=42.0)
    assert config.MatchConfig().radius(geo) == 42.0
    assert config.MatchConfig(candidate_radius=7.0).radius(geo) == 7.0


def test_resolve_big_m_defaults_and_validates():
    """
    Assert that big-M defaults to ten times the scene reach and must exceed twice of it.
    """
    assert config.MergeConfig(eps_max=5.0).resolve_big_m(95.0) == 1000.0
    assert config.MergeConfig(eps_max=5.0, big_m=201.0).resolve_big_m(95.0) == 201.0
    with pytest.raises(exceptions.ConfigError):
        config.MergeConfig(eps_max=5.0, big_m=200.0).resolve_big_m(95.0)
