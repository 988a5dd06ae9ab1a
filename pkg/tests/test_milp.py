"""
    test_milp
    ~~~~~~~~~

    Tests for the :mod:`~kgmc.milp` module.
"""
import itertools

import numpy
import pytest

from kgmc import config, exceptions, milp, timeouts


@pytest.fixture(scope='session', params=[1, 3])
def solver_cfg(request):
    """
    Fixture that yields solver configurations with one and several workers.
    """
    return config.MergeConfig(workers=request.param)


@pytest.fixture(scope='session', params=[11, 12, 13, 14, 15])
def random_knapsack(request):
    """
    Fixture that yields random binary knapsack instances as (values, weights, capacity).
    """
    rng = numpy.random.default_rng(request.param)
    values = rng.integers(1, 20, size=7).astype(float)
    weights = rng.integers(1, 10, size=7).astype(float)
    return values, weights, float(weights.sum() // 2)


def knapsack_model(values, weights, capacity):
    model = milp.MilpModel('knapsack')
    items = [model.add_var('item{}'.format(k), binary=True) for k in range(len(values))]
    model.add_constraint(sum((float(w) * x for w, x in zip(weights, items)), milp.LinExpr()), '<=', capacity)
    model.minimize(sum((-float(v) * x for v, x in zip(values, items)), milp.LinExpr()))
    return model


def fractional_model():
    model = milp.MilpModel('switch')
    y = model.add_var('y', 0.0, 10.0)
    b = model.add_var('b', binary=True)
    model.add_constraint(y + 3.0 * b, '>=', 2.0)
    model.minimize(y + 0.1 * b)
    return model, y, b


def test_lin_expr_arithmetic():
    """
    Assert that affine expressions combine coefficients and constants.
    """
    x, y = milp.LinExpr({0: 1.0}), milp.LinExpr({1: 1.0})
    expr = 2 * x - (y - 3) + 1
    assert expr.coefs == {0: 2.0, 1: -1.0}
    assert expr.const == 4.0
    assert expr.value([1.0, 5.0]) == 1.0
    assert (x - x).is_constant
    assert (x + y).key() == (y + x).key()
    assert (5 - x).key() == ((-1.0) * x + 5).key()


def test_knapsack_matches_brute_force(random_knapsack, solver_cfg):
    """
    Assert that branch-and-bound finds the enumerated optimum of binary knapsack instances.
    """
    values, weights, capacity = random_knapsack
    best = max(sum(values[i] for i in chosen)
               for r in range(len(values) + 1) for chosen in itertools.combinations(range(len(values)), r)
               if sum(weights[i] for i in chosen) <= capacity)
    model = knapsack_model(values, weights, capacity)
    solution = milp.solve_milp(model, solver_cfg)
    assert solution.optimal
    assert solution.objective == pytest.approx(-best)
    assert model.is_feasible(solution.x)


def test_fractional_relaxation_is_branched(solver_cfg):
    """
    Assert that a model with a fractional relaxation is branched to its integral optimum.
    """
    model, y, b = fractional_model()
    solution = milp.solve_milp(model, solver_cfg)
    assert solution.optimal
    assert solution.objective == pytest.approx(0.1)
    assert solution.value(b) == 1.0
    assert solution.value(y) == pytest.approx(0.0)
    assert solution.nodes > 1


def test_failed_polish_keeps_branching(mocker):
    """
    Assert that a node whose rounded binaries fail to re-solve is branched further instead of
    becoming an incumbent, and the search still reaches the verified optimum.
    """
    model = milp.MilpModel('pair')
    a, b = model.add_var('a', binary=True), model.add_var('b', binary=True)
    model.add_constraint(a + b, '<=', 2.0)
    model.minimize(-1.0 * a - b)
    real_polish = milp._polish
    calls = []

    def fail_first(*args):
        calls.append(args)
        return None if len(calls) == 1 else real_polish(*args)

    mocker.patch('kgmc.milp._polish', side_effect=fail_first)
    solution = milp.solve_milp(model)
    assert len(calls) > 1
    assert solution.optimal
    assert solution.objective == pytest.approx(-2.0)
    assert solution.value(a) == 1.0 and solution.value(b) == 1.0
    assert solution.nodes == 3
    assert model.is_feasible(solution.x)


def test_unpolishable_model_is_not_reported_optimal(mocker):
    """
    Assert that when no rounded assignment ever re-solves the model is reported infeasible.
    """
    mocker.patch('kgmc.milp._polish', return_value=None)
    model, _, _ = fractional_model()
    solution = milp.solve_milp(model)
    assert solution.status == milp.INFEASIBLE
    assert solution.x is None


def test_infeasible_model_reports_infeasible():
    """
    Assert that contradictory constraints on a binary yield an infeasible solution.
    """
    model = milp.MilpModel('contradiction')
    b = model.add_var('b', binary=True)
    model.add_constraint(b, '>=', 0.5)
    model.add_constraint(b, '<=', 0.4)
    solution = milp.solve_milp(model)
    assert solution.status == milp.INFEASIBLE
    assert not solution.optimal and solution.x is None


def test_empty_model_is_optimal():
    """
    Assert that a model without variables solves to a zero objective.
    """
    solution = milp.solve_milp(milp.MilpModel())
    assert solution.optimal and solution.objective == 0.0


def test_node_limit_raises_solver_timeout_error():
    """
    Assert that running out of nodes before proving optimality raises :class:`~kgmc.exceptions.SolverTimeoutError`.
    """
    model, _, _ = fractional_model()
    with pytest.raises(exceptions.SolverTimeoutError):
        milp.solve_milp(model, config.MergeConfig(node_limit=1))


def test_time_limit_raises_solver_timeout_error(mocker):
    """
    Assert that an exceeded time limit raises :class:`~kgmc.exceptions.SolverTimeoutError`.
    """
    mocker.patch.object(timeouts.Timeout, 'exceeded', new_callable=mocker.PropertyMock, return_value=True)
    model, _, _ = fractional_model()
    with pytest.raises(exceptions.SolverTimeoutError):
        milp.solve_milp(model, config.MergeConfig(time_limit=1.0))


def test_abs_cost_measures_distance():
    """
    Assert that an absolute-value cost equals the distance of the expression from zero at the optimum.
    """
    model = milp.MilpModel('abs')
    x = model.add_var('x', 0.0, 1.0)
    t = model.add_abs_cost(x - 3.0, 2.0, 'abs_x')
    solution = milp.solve_milp(model)
    assert solution.objective == pytest.approx(4.0)
    assert solution.value(t) == pytest.approx(abs(solution.value(x) - 3.0))
    assert model.abs_pairs[0][0].key() == t.key()


def test_bounds_of_expression():
    """
    Assert that expression bounds follow the sign of each coefficient.
    """
    model = milp.MilpModel()
    x = model.add_var('x', -1.0, 2.0)
    y = model.add_var('y', 0.0, 3.0)
    assert model.bounds_of(2 * x - y + 1) == (-4.0, 5.0)


def test_model_rejects_invalid_declarations():
    """
    Assert that duplicate variables, empty bounds, unknown senses and undeclared variables are rejected.
    """
    model = milp.MilpModel()
    x = model.add_var('x')
    with pytest.raises(exceptions.ConflationError):
        model.add_var('x')
    with pytest.raises(exceptions.ConflationError):
        model.add_var('z', 2.0, 1.0)
    with pytest.raises(exceptions.ConflationError):
        model.add_constraint(x, '<', 1.0)
    with pytest.raises(exceptions.ConflationError):
        model.add_constraint(milp.LinExpr({5: 1.0}), '<=', 1.0)
    with pytest.raises(exceptions.ConflationError):
        model.index_of('missing')


def test_constraint_constant_moves_to_rhs():
    """
    Assert that the constant of a constraint expression is moved to the right-hand side.
    """
    model = milp.MilpModel()
    x = model.add_var('x')
    constraint = model.add_constraint(x + 2.0, '<=', 5.0)
    assert constraint.rhs == 3.0
    assert constraint.slack([1.0]) == 2.0
    assert constraint.slack([4.0]) == -1.0


def test_lp_text_lists_every_section():
    """
    Assert that the LP dump carries the objective, constraints, bounds and binaries with clean names.
    """
    model, _, _ = fractional_model()
    model.add_var('a|b.eps_c_x', -1.0, 1.0)
    text = model.to_lp_text()
    lines = text.splitlines()
    assert lines[1] == 'Minimize'
    assert lines[2] == ' obj: 1.0 y + 0.1 b'
    assert ' c0: 1.0 y + 3.0 b >= 2.0' in lines
    assert ' 0.0 <= y <= 10.0' in lines
    assert ' -1.0 <= a_b.eps_c_x <= 1.0' in lines
    assert lines[lines.index('Binaries') + 1] == ' b'
    assert lines[-1] == 'End'


def test_binary_feasible_enumerates_indicator_choices(binary_feasible):
    """
    Assert that the enumeration checker finds a binary assignment when one exists.
    """
    model = milp.MilpModel()
    x = model.add_var('x', -10.0, 10.0)
    b = model.add_var('b', binary=True)
    model.add_constraint(x - 20 * b, '<=', 1.0)
    model.add_constraint(x - 20 * b, '>=', -16.0)
    assert binary_feasible(model, {'x': 0.0})
    assert not binary_feasible(model, {'x': 2.5})
    assert binary_feasible(model, {'x': 5.0})
    assert not binary_feasible(model, {'x': 11.0})


def test_binary_feasible_requires_every_continuous_value(binary_feasible):
    """
    Assert that a missing continuous value raises :class:`~kgmc.exceptions.ConfigError`.
    """
    model = milp.MilpModel()
    model.add_var('x')
    with pytest.raises(exceptions.ConfigError):
        binary_feasible(model, {})
