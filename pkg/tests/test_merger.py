"""
    test_merger
    ~~~~~~~~~~~

    Tests for the :mod:`~kgmc.merger` module.
"""
import numpy
import pytest

from kgmc import config, exceptions, geom, matcher, merger, metrics, milp


def box_polygon(entity_id, x_min, x_max, y_min, y_max):
    return geom.PolyEntity.from_coords(entity_id, [(x_min, y_min), (x_max, y_min), (x_max, y_max), (x_min, y_max)])


def no_matches():
    return matcher.MatchSet((), 0.5)


@pytest.fixture(scope='function')
def canonical_cfg():
    """
    Fixture that yields the merge configuration of the single overlapping rectangle instance.
    """
    return config.MergeConfig(gamma=2.1, eps_max=2.0)


@pytest.fixture(scope='session', params=[21, 22, 23])
def random_shifts(request):
    """
    Fixture that yields random valid shifts of a 2x2 rectangle with ``eps_max`` 1.
    """
    rng = numpy.random.default_rng(request.param)
    shifts = []
    for _ in range(40):
        center = rng.uniform(-0.5, 0.5, size=2)
        sides = rng.uniform(-0.5, 0.5, size=4)
        shifts.append(merger.EpsilonShift(center[0], center[1], *sides))
    return shifts


def pair_model(fixed_box, movable_box, eps_max, contact_tolerance=0.0):
    model = milp.MilpModel('pair')
    rect, _ = merger.shifted_rect(model, 'm', movable_box, eps_max)
    encoder = merger.ImplicationEncoder(model, 100.0)
    merger.encode_pair_nonoverlap(encoder, rect, merger.fixed_rect(fixed_box), 'm|f', contact_tolerance)
    return model


def shift_values(shift):
    return {'m.{}'.format(name): value for name, value in zip(merger.COMPONENTS, shift.as_list())}


def test_epsilon_shift_apply_and_cost():
    """
    Assert that a shift moves the center and sides of a rectangle and weighs side shifts by gamma.
    """
    shift = merger.EpsilonShift(eps_c_x=1.0, eps_1_y=-0.5, eps_2_x=0.25)
    assert shift.apply_to(geom.Mbr(0, 2, 0, 2)) == geom.Mbr(1.0, 3.25, -0.5, 2.0)
    assert shift.cost(2.0) == pytest.approx(1.0 + 2.0 * 0.75)
    assert merger.EpsilonShift().is_zero
    assert not shift.is_zero


def test_overlaps_allows_contact():
    """
    Assert that rectangles touching along an edge do not overlap while identical ones do.
    """
    a = geom.Mbr(0, 2, 0, 2)
    assert not merger.overlaps(a, geom.Mbr(2, 4, 0, 2))
    assert not merger.overlaps(a, geom.Mbr(2, 4, 2, 4))
    assert merger.overlaps(a, a)
    assert merger.overlaps(a, geom.Mbr(1.9, 4, 0, 2))
    assert not merger.overlaps(a, geom.Mbr(1.9, 4, 0, 2), tolerance=0.2)


def test_encoding_agrees_with_overlap_predicate(random_shifts, binary_feasible):
    """
    Assert that a shift admits a binary assignment of the encoding exactly when the shifted
    rectangle does not overlap the fixed one.
    """
    fixed_box, movable_box = geom.Mbr(0, 2, 0, 2), geom.Mbr(1.8, 3.8, 0.5, 2.5)
    model = pair_model(fixed_box, movable_box, 1.0)
    outcomes = set()
    for shift in random_shifts:
        feasible = binary_feasible(model, shift_values(shift))
        assert feasible == (not merger.overlaps(shift.apply_to(movable_box), fixed_box))
        outcomes.add(feasible)
    assert outcomes == {True, False}


@pytest.mark.parametrize('movable_box, feasible', [
    (geom.Mbr(2, 4, 0, 2), True),
    (geom.Mbr(2, 4, 2, 4), True),
    (geom.Mbr(5, 6, 5, 6), True),
    (geom.Mbr(0, 2, 0, 2), False),
    (geom.Mbr(0.5, 1.5, 0.5, 1.5), False),
    (geom.Mbr(-1, 3, -1, 3), False),
    (geom.Mbr(0.5, 1.5, -1, 3), False),
    (geom.Mbr(-1, 3, 0.5, 1.5), False),
])
def test_encoding_at_zero_shift(movable_box, feasible, binary_feasible):
    """
    Assert that the unshifted encoding accepts contact and separation and rejects containment,
    identity and crossing rectangles.
    """
    model = pair_model(geom.Mbr(0, 2, 0, 2), movable_box, 1.0)
    assert binary_feasible(model, shift_values(merger.EpsilonShift())) == feasible


def test_contact_tolerance_admits_shallow_overlap(binary_feasible):
    """
    Assert that an overlap shallower than the contact tolerance is accepted.
    """
    model = pair_model(geom.Mbr(0, 2, 0, 2), geom.Mbr(1.9, 3.9, 0, 2), 1.0, contact_tolerance=0.2)
    assert binary_feasible(model, shift_values(merger.EpsilonShift()))


def test_canonical_instance_moves_center(canonical_cfg):
    """
    Assert that the cheapest way out of a one unit overlap is a unit center shift.
    """
    merge_model = merger.build_merge_milp([('m', 'f')], {'f': geom.Mbr(0, 2, 0, 2)},
                                          {'m': geom.Mbr(1, 3, 0, 2)}, canonical_cfg)
    plan = merger.solve_merge(merge_model, canonical_cfg)
    assert plan.optimal
    assert plan.objective == pytest.approx(1.0, abs=1e-6)
    shift = plan.shift('m')
    assert shift.eps_c_x == pytest.approx(1.0, abs=1e-6)
    assert shift.cost(canonical_cfg.gamma) == pytest.approx(plan.objective, abs=1e-6)
    moved = shift.apply_to(geom.Mbr(1, 3, 0, 2))
    assert not merger.overlaps(moved, geom.Mbr(0, 2, 0, 2), tolerance=1e-6)


def test_abs_auxiliaries_equal_magnitudes(canonical_cfg):
    """
    Assert that every absolute value auxiliary equals the magnitude of its expression at the optimum.
    """
    merge_model = merger.build_merge_milp([('m', 'f')], {'f': geom.Mbr(0, 2, 0, 2)},
                                          {'m': geom.Mbr(1, 3, 0, 2)}, canonical_cfg)
    solution = milp.solve_milp(merge_model.model, canonical_cfg)
    assert len(merge_model.model.abs_pairs) == len(merger.COMPONENTS)
    for aux, expr in merge_model.model.abs_pairs:
        assert solution.value(aux) == pytest.approx(abs(solution.value(expr)), abs=1e-6)


def test_pinned_rectangle_is_infeasible():
    """
    Assert that a rectangle pinned between two fixed rectangles cannot be placed with a small movement bound.
    """
    cfg = config.MergeConfig(eps_max=0.2)
    fixed = {'a': geom.Mbr(0, 2, 0, 2), 'b': geom.Mbr(3, 5, 0, 2)}
    merge_model = merger.build_merge_milp([('m', 'a'), ('m', 'b')], fixed, {'m': geom.Mbr(1.5, 3.5, 0, 2)}, cfg)
    plan = merger.solve_merge(merge_model, cfg)
    assert not plan.optimal
    assert plan.status == milp.INFEASIBLE
    assert plan.shifts == {}


def test_crossing_rectangle_needs_shift():
    """
    Assert that a rectangle crossing a fixed one is infeasible in place and separated when it may move.
    """
    fixed, movable = {'f': geom.Mbr(0, 2, 0, 2)}, {'m': geom.Mbr(0.5, 1.5, -1, 3)}
    tight = config.MergeConfig(eps_max=0.2)
    assert not merger.solve_merge(merger.build_merge_milp([('m', 'f')], fixed, movable, tight), tight).optimal

    loose = config.MergeConfig(eps_max=2.0)
    plan = merger.solve_merge(merger.build_merge_milp([('m', 'f')], fixed, movable, loose), loose)
    assert plan.optimal
    assert plan.objective > 0
    assert not merger.overlaps(plan.shift('m').apply_to(movable['m']), fixed['f'], tolerance=1e-6)


def test_identical_rectangle_moves_a_full_width(canonical_cfg):
    """
    Assert that a rectangle identical to a fixed one is moved clear of it rather than by a slack-sized step.
    """
    box = geom.Mbr(0, 2, 0, 2)
    plan = merger.solve_merge(merger.build_merge_milp([('m', 'f')], {'f': box}, {'m': box}, canonical_cfg),
                              canonical_cfg)
    assert plan.optimal
    assert plan.objective == pytest.approx(2.0, abs=1e-4)
    assert not merger.overlaps(plan.shift('m').apply_to(box), box, tolerance=1e-6)


def test_shifted_rectangle_keeps_positive_width():
    """
    Assert that squeezing a side is cheaper than moving yet the shifted rectangle keeps a positive width.
    """
    cfg = config.MergeConfig(gamma=0.1, eps_max=1.0)
    fixed, movable = geom.Mbr(0, 2, 0, 2), geom.Mbr(1.5, 2, 0.5, 1.5)
    plan = merger.solve_merge(merger.build_merge_milp([('m', 'f')], {'f': fixed}, {'m': movable}, cfg), cfg)
    assert plan.optimal
    assert plan.objective == pytest.approx(cfg.gamma * (0.5 + cfg.strict_slack), abs=1e-5)
    moved = plan.shift('m').apply_to(movable)
    assert moved.width >= cfg.strict_slack - 1e-7
    assert not merger.overlaps(moved, fixed, tolerance=1e-6)

    g_s = geom.Gdb.build([box_polygon('a', 0, 2, 0, 2)], [])
    g_t = geom.Gdb.build([box_polygon('c', 1.5, 2, 0.5, 1.5)], [])
    plan, _ = merger.plan_merge(g_s, g_t, no_matches(), cfg)
    merged = merger.apply_merge(g_s, g_t, no_matches(), plan)
    assert merged.get('c').area > 0


def test_big_m_must_dominate_scene():
    """
    Assert that a configured big-M below twice the scene extent raises :class:`~kgmc.exceptions.ConfigError`.
    """
    cfg = config.MergeConfig(big_m=1.0)
    with pytest.raises(exceptions.ConfigError):
        merger.build_merge_milp([('m', 'f')], {'f': geom.Mbr(0, 2, 0, 2)}, {'m': geom.Mbr(1, 3, 0, 2)}, cfg)


def test_pairs_must_start_with_movable():
    """
    Assert that a pair led by a fixed id raises :class:`~kgmc.exceptions.ConflationError`.
    """
    with pytest.raises(exceptions.ConflationError):
        merger.build_merge_milp([('f', 'm')], {'f': geom.Mbr(0, 2, 0, 2)}, {'m': geom.Mbr(1, 3, 0, 2)},
                                config.MergeConfig())


def test_candidate_overlap_pairs():
    """
    Assert that candidates use ``eps_max`` against fixed rectangles and ``2 * eps_max`` between movable ones.
    """
    fixed = {'f': geom.Mbr(0, 1, 0, 1)}
    movable = {'m1': geom.Mbr(1.5, 2.5, 0, 1), 'm2': geom.Mbr(3, 4, 0, 1), 'm3': geom.Mbr(10, 11, 10, 11)}
    assert merger.candidate_overlap_pairs(fixed, movable, 0.6) == [('m1', 'f'), ('m1', 'm2')]
    assert merger.candidate_overlap_pairs(fixed, movable, 0.1) == []


def test_unmatched_targets_and_added_ids():
    """
    Assert that matched targets are left out and colliding ids get the ``target:`` prefix.
    """
    g_s = geom.Gdb.build([box_polygon('q', 20, 21, 20, 21)], [])
    g_t = geom.Gdb.build([box_polygon('p', 0, 1, 0, 1), box_polygon('q', 3, 4, 0, 1)],
                         [geom.Segment('s', [(0, 5), (4, 5)], 'w')])
    matches = matcher.MatchSet((('x', 'p', 0.9),), 0.5)
    assert list(merger.unmatched_targets(matches, g_t)) == ['q', 's']
    assert list(merger.unmatched_targets(matches, g_t, include_segments=False)) == ['q']
    assert merger.added_ids(g_s, g_t, matches) == {'target:q': 'q', 's': 's'}


def test_plan_and_apply_merge_remove_new_inconsistency():
    """
    Assert that the merged database adds no inconsistency while placing targets unchanged does.
    """
    g_s = geom.Gdb.build([box_polygon('a', 0, 2, 0, 2)], [])
    g_t = geom.Gdb.build([box_polygon('c', 1, 3, 0, 2)], [])
    cfg = config.MergeConfig(eps_max=2.0)
    plan, merge_model = merger.plan_merge(g_s, g_t, no_matches(), cfg)
    assert plan.optimal
    assert merge_model.pairs == [('c', 'source:a')]

    merged = merger.apply_merge(g_s, g_t, no_matches(), plan)
    assert merged.ids == ['a', 'c']
    assert geom.mbr(merged.get('c')).x_min == pytest.approx(2.0, abs=1e-6)
    assert metrics.cni_report(g_s, merged).new == pytest.approx(0.0, abs=1e-6)

    baseline = merger.position_merge_baseline(g_s, g_t, no_matches())
    assert metrics.cni_report(g_s, baseline).new == pytest.approx(1.0 / 3.0)


def test_apply_merge_keeps_source_features():
    """
    Assert that merging leaves every source feature vector unchanged and scales added shapes like the source.
    """
    g_s = geom.Gdb.build([box_polygon('a', 0, 2, 0, 2), box_polygon('b', 10, 14, 0, 4)], [],
                         {'a': {'use': 'shop', 'levels': 1}, 'b': {'use': 'home', 'levels': 3}})
    g_t = geom.Gdb.build([box_polygon('c', 40, 60, 40, 60)], [], {'c': {'use': 'home', 'levels': 9}})
    plan, _ = merger.plan_merge(g_s, g_t, no_matches(), config.MergeConfig())
    merged = merger.apply_merge(g_s, g_t, no_matches(), plan)
    assert merged.feature_names == g_s.feature_names
    for entity_id in g_s.ids:
        numpy.testing.assert_array_equal(merged.features[entity_id], g_s.features[entity_id])
    names = list(merged.feature_names)
    added = merged.features['c']
    assert added.shape == g_s.features['a'].shape
    assert added[names.index('x')] > 1.0
    assert added[names.index('levels')] == pytest.approx(4.0)
    assert added[names.index('use=home')] == 1.0


def test_plan_merge_skips_segment_pairs():
    """
    Assert that crossing road segments are not constrained against each other.
    """
    g_s = geom.Gdb.build([], [geom.Segment('r', [(0, 0), (4, 0)], 'w1')])
    g_t = geom.Gdb.build([], [geom.Segment('t', [(2, -2), (2, 2)], 'w2')])
    plan, merge_model = merger.plan_merge(g_s, g_t, no_matches(), config.MergeConfig())
    assert merge_model.pairs == []
    assert plan.optimal
    assert plan.objective == pytest.approx(0.0)
    merged = merger.apply_merge(g_s, g_t, no_matches(), plan)
    assert merged.get('t').coords == [(2.0, -2.0), (2.0, 2.0)]


def test_infeasible_merge_reports_pairs():
    """
    Assert that an infeasible plan names its conflicting pairs and cannot be applied.
    """
    g_s = geom.Gdb.build([box_polygon('a', 0, 2, 0, 2), box_polygon('b', 3, 5, 0, 2)], [])
    g_t = geom.Gdb.build([box_polygon('c', 1.5, 3.5, 0, 2)], [])
    plan, _ = merger.plan_merge(g_s, g_t, no_matches(), config.MergeConfig(eps_max=0.2))
    assert not plan.optimal
    assert set(plan.infeasible_pairs) == {('c', 'a'), ('c', 'b')}
    with pytest.raises(exceptions.InfeasibleMergeError) as info:
        merger.apply_merge(g_s, g_t, no_matches(), plan)
    assert info.value.exit_code == 3
    assert sorted(info.value.pair_ids) == [('c', 'a'), ('c', 'b')]


def test_merge_plan_save_and_load(tmpdir):
    """
    Assert that a saved merge plan loads back unchanged.
    """
    plan = merger.MergePlan({'c': merger.EpsilonShift(eps_c_x=1.0, eps_2_y=-0.25)}, 1.525, milp.OPTIMAL, (), 3)
    path = str(tmpdir.join('plan.json'))
    plan.save(path)
    assert merger.MergePlan.load(path) == plan


def test_merge_plan_load_missing_file(tmpdir):
    """
    Assert that loading a missing plan raises :class:`~kgmc.exceptions.ConflationError`.
    """
    with pytest.raises(exceptions.ConflationError):
        merger.MergePlan.load(str(tmpdir.join('missing.json')))
