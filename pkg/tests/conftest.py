"""
    conftest
    ~~~~~~~~

    Shared fixtures for the test suite.
"""
import itertools

import numpy
import pytest

from kgmc import exceptions


def _binary_components(model):
    parent = {v: v for v in model.binaries}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for constraint in model.constraints:
        members = [v for v in constraint.coefs if model.binary[v]]
        for other in members[1:]:
            parent[find(other)] = find(members[0])
    groups = {}
    for v in model.binaries:
        groups.setdefault(find(v), []).append(v)
    return [groups[root] for root in sorted(groups)]


def _binary_feasible(model, values, tol=1e-9, max_binaries=20):
    x = numpy.zeros(model.n_vars)
    for v in range(model.n_vars):
        if model.binary[v]:
            continue
        name = model.names[v]
        if name not in values:
            raise exceptions.ConfigError('No value given for continuous variable {}'.format(name))
        x[v] = values[name]
        if not model.lb[v] - tol <= x[v] <= model.ub[v] + tol:
            return False

    by_group = {}
    components = _binary_components(model)
    group_of = {v: i for i, members in enumerate(components) for v in members}
    for constraint in model.constraints:
        members = [v for v in constraint.coefs if model.binary[v]]
        if not members:
            if constraint.slack(x) < -tol:
                return False
            continue
        by_group.setdefault(group_of[members[0]], []).append(constraint)

    for index, constraints in by_group.items():
        members = components[index]
        if len(members) > max_binaries:
            raise exceptions.ConfigError('Binary group of {} variables is too large to enumerate'.format(len(members)))
        for assignment in itertools.product((0.0, 1.0), repeat=len(members)):
            x[members] = assignment
            if all(constraint.slack(x) >= -tol for constraint in constraints):
                break
        else:
            return False
    return True


@pytest.fixture(scope='session')
def binary_feasible():
    """
    Fixture that yields a checker telling whether fixed continuous values admit a binary assignment
    satisfying every constraint, by enumerating each group of binaries that share constraints.
    """
    return _binary_feasible
