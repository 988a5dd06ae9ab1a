"""
    kgmc.milp
    ~~~~~~~~~

    Contains a small mixed integer linear program model, its LP-format dump and an exact
    best-bound branch-and-bound solver over dual simplex relaxations.
"""
import concurrent.futures
import dataclasses
import heapq
import itertools
import logging
import math
import re
import typing

import numpy
from scipy import optimize, sparse

from . import config, exceptions, hints, timeouts

__all__ = ['LinExpr', 'Constraint', 'MilpModel', 'MilpSolution', 'solve_milp', 'OPTIMAL', 'INFEASIBLE']

log = logging.getLogger(__name__)

OPTIMAL = 'optimal'
INFEASIBLE = 'infeasible'

_SENSES = ('<=', '>=', '==')


class LinExpr:
    """
    Affine expression ``sum(coef * var) + const`` over variable indices of a :class:`~kgmc.milp.MilpModel`.
    """

    __slots__ = ('coefs', 'const')

    def __init__(self, coefs: typing.Optional[typing.Mapping[int, float]] = None, const: hints.Float = 0.0) -> None:
        self.coefs = {v: float(c) for v, c in (coefs or {}).items() if c != 0}
        self.const = float(const)

    def __repr__(self) -> hints.Str:
        return '<{}({}, const={})>'.format(self.__class__.__name__, self.coefs, self.const)

    @staticmethod
    def of(value) -> 'LinExpr':
        return value if isinstance(value, LinExpr) else LinExpr(const=value)

    def __add__(self, other) -> 'LinExpr':
        other = LinExpr.of(other)
        coefs = dict(self.coefs)
        for v, c in other.coefs.items():
            coefs[v] = coefs.get(v, 0.0) + c
        return LinExpr(coefs, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> 'LinExpr':
        return LinExpr({v: -c for v, c in self.coefs.items()}, -self.const)

    def __sub__(self, other) -> 'LinExpr':
        return self + (-LinExpr.of(other))

    def __rsub__(self, other) -> 'LinExpr':
        return LinExpr.of(other) - self

    def __mul__(self, scalar: hints.Float) -> 'LinExpr':
        return LinExpr({v: c * scalar for v, c in self.coefs.items()}, self.const * scalar)

    __rmul__ = __mul__

    @property
    def is_constant(self) -> hints.Bool:
        return not self.coefs

    def key(self) -> typing.Tuple:
        """
        Hashable canonical form.
        """
        return tuple(sorted(self.coefs.items())), self.const

    def value(self, x: typing.Sequence[float]) -> hints.Float:
        return self.const + sum(c * x[v] for v, c in self.coefs.items())


@dataclasses.dataclass(frozen=True)
class Constraint:
    """
    Linear constraint ``sum(coef * var) <sense> rhs``.
    """
    coefs: typing.Dict[int, float]
    sense: str
    rhs: float
    tag: str = ''

    def slack(self, x: typing.Sequence[float]) -> hints.Float:
        """
        Amount by which the constraint holds at ``x``; negative when violated.
        """
        lhs = sum(c * x[v] for v, c in self.coefs.items())
        if self.sense == '<=':
            return self.rhs - lhs
        if self.sense == '>=':
            return lhs - self.rhs
        return -abs(lhs - self.rhs)


class MilpModel:
    """
    Minimization problem over bounded continuous and binary variables.
    """

    def __init__(self, name: hints.Str = 'model') -> None:
        self.name = name
        self.names = []
        self.lb = []
        self.ub = []
        self.binary = []
        self.objective = {}
        self.constraints = []
        #: (auxiliary, variable expression) pairs created by :meth:`~kgmc.milp.MilpModel.add_abs_cost`.
        self.abs_pairs = []
        self._index = {}

    def __repr__(self) -> hints.Str:
        return '<{}({!r}, {} variables, {} binaries, {} constraints)>'.format(
            self.__class__.__name__, self.name, self.n_vars, len(self.binaries), len(self.constraints))

    @property
    def n_vars(self) -> hints.Int:
        return len(self.names)

    @property
    def binaries(self) -> typing.List[int]:
        return [i for i, b in enumerate(self.binary) if b]

    def index_of(self, name: hints.Str) -> hints.Int:
        try:
            return self._index[name]
        except KeyError as ex:
            raise exceptions.ConflationError('Unknown variable {!r}'.format(name)) from ex

    def add_var(self, name: hints.Str, lb: hints.Float = 0.0, ub: hints.Float = math.inf,
                binary: hints.Bool = False) -> LinExpr:
        """
        Declare a variable.

        :param name: Unique variable name
        :type name: :class:`~str`
        :param lb: Lower bound
        :type lb: :class:`~float`
        :param ub: Upper bound
        :type ub: :class:`~float`
        :param binary: Restrict to {0, 1}
        :type binary: :class:`~bool`
        :return: Expression of the variable
        :rtype: :class:`~kgmc.milp.LinExpr`
        """
        if name in self._index:
            raise exceptions.ConflationError('Variable {!r} declared twice'.format(name))
        if binary:
            lb, ub = 0.0, 1.0
        if lb > ub:
            raise exceptions.ConflationError('Variable {!r} has empty bounds [{}, {}]'.format(name, lb, ub))
        self._index[name] = len(self.names)
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(bool(binary))
        return LinExpr({self._index[name]: 1.0})

    def add_constraint(self, expr: LinExpr, sense: hints.Str, rhs: hints.Float = 0.0,
                       tag: hints.Str = '') -> Constraint:
        """
        Add ``expr <sense> rhs``; the constant of ``expr`` moves to the right-hand side.
        """
        if sense not in _SENSES:
            raise exceptions.ConflationError('Unknown constraint sense {!r}'.format(sense))
        expr = LinExpr.of(expr)
        for v in expr.coefs:
            if not 0 <= v < self.n_vars:
                raise exceptions.ConflationError('Constraint references undeclared variable {}'.format(v))
        constraint = Constraint(dict(expr.coefs), sense, float(rhs) - expr.const, tag)
        self.constraints.append(constraint)
        return constraint

    def minimize(self, expr: LinExpr) -> None:
        """
        Add an expression to the objective; its constant is dropped.
        """
        for v, c in LinExpr.of(expr).coefs.items():
            self.objective[v] = self.objective.get(v, 0.0) + c

    def add_abs_cost(self, expr: LinExpr, weight: hints.Float, name: hints.Str) -> LinExpr:
        """
        Add ``weight * |expr|`` to the objective through an auxiliary ``t >= expr, t >= -expr``.

        :return: Expression of the auxiliary
        :rtype: :class:`~kgmc.milp.LinExpr`
        """
        lo, hi = self.bounds_of(expr)
        t = self.add_var(name, 0.0, max(abs(lo), abs(hi)))
        self.add_constraint(t - expr, '>=', 0.0, tag=name)
        self.add_constraint(t + expr, '>=', 0.0, tag=name)
        self.minimize(t * weight)
        self.abs_pairs.append((t, expr))
        return t

    def bounds_of(self, expr: LinExpr) -> typing.Tuple[float, float]:
        """
        Interval of an expression over the variable bounds.
        """
        lo = hi = expr.const
        for v, c in expr.coefs.items():
            if c > 0:
                lo += c * self.lb[v]
                hi += c * self.ub[v]
            else:
                lo += c * self.ub[v]
                hi += c * self.lb[v]
        return lo, hi

    def is_feasible(self, x: typing.Sequence[float], tol: hints.Float = 1e-6) -> hints.Bool:
        """
        Check bounds, integrality and every constraint at a point.
        """
        for v in range(self.n_vars):
            if not self.lb[v] - tol <= x[v] <= self.ub[v] + tol:
                return False
            if self.binary[v] and min(abs(x[v]), abs(x[v] - 1)) > tol:
                return False
        return all(c.slack(x) >= -tol for c in self.constraints)

    def objective_value(self, x: typing.Sequence[float]) -> hints.Float:
        return sum(c * x[v] for v, c in self.objective.items())

    def to_arrays(self):
        """
        Dense objective, sparse inequality and equality systems, and bounds in ``linprog`` form.
        """
        c = numpy.zeros(self.n_vars)
        for v, coef in self.objective.items():
            c[v] = coef
        rows_ub, rows_eq = [], []
        for constraint in self.constraints:
            if constraint.sense == '<=':
                rows_ub.append((constraint.coefs, constraint.rhs))
            elif constraint.sense == '>=':
                rows_ub.append(({v: -a for v, a in constraint.coefs.items()}, -constraint.rhs))
            else:
                rows_eq.append((constraint.coefs, constraint.rhs))
        a_ub, b_ub = self._matrix(rows_ub)
        a_eq, b_eq = self._matrix(rows_eq)
        bounds = numpy.column_stack([self.lb, self.ub]) if self.n_vars else numpy.zeros((0, 2))
        return c, a_ub, b_ub, a_eq, b_eq, bounds

    def _matrix(self, rows):
        if not rows:
            return None, None
        data, row_idx, col_idx = [], [], []
        for r, (coefs, _) in enumerate(rows):
            for v, a in coefs.items():
                data.append(a)
                row_idx.append(r)
                col_idx.append(v)
        matrix = sparse.csr_matrix((data, (row_idx, col_idx)), shape=(len(rows), self.n_vars))
        return matrix, numpy.array([rhs for _, rhs in rows])

    def to_lp_text(self) -> hints.Str:
        """
        Render the model in the LP file format read by common MILP solvers.

        :return: LP document
        :rtype: :class:`~str`
        """
        names = _lp_names(self.names)

        def terms(coefs):
            if not coefs:
                return '0 {}'.format(names[0]) if names else '0'
            parts = []
            for v, c in sorted(coefs.items()):
                sign = '-' if c < 0 else '+'
                parts.append('{} {} {}'.format(sign, repr(abs(c)), names[v]))
            text = ' '.join(parts)
            return text[2:] if text.startswith('+ ') else text

        lines = ['\\ {}'.format(self.name), 'Minimize', ' obj: {}'.format(terms(self.objective)), 'Subject To']
        for i, constraint in enumerate(self.constraints):
            sense = '=' if constraint.sense == '==' else constraint.sense
            lines.append(' c{}: {} {} {}'.format(i, terms(constraint.coefs), sense, repr(constraint.rhs)))
        lines.append('Bounds')
        for v in range(self.n_vars):
            if self.binary[v]:
                continue
            lo = '-inf' if math.isinf(self.lb[v]) else repr(self.lb[v])
            hi = '+inf' if math.isinf(self.ub[v]) else repr(self.ub[v])
            lines.append(' {} <= {} <= {}'.format(lo, names[v], hi))
        binaries = [names[v] for v in self.binaries]
        if binaries:
            lines.append('Binaries')
            lines.extend(' {}'.format(name) for name in binaries)
        lines.append('End')
        return '\n'.join(lines) + '\n'


def _lp_names(names: typing.Sequence[str]) -> typing.List[str]:
    """
    Names restricted to the LP format alphabet, kept unique.
    """
    seen = set()
    cleaned = []
    for i, name in enumerate(names):
        candidate = re.sub(r'[^A-Za-z0-9_.]', '_', name)
        if not candidate or candidate[0].isdigit() or candidate[0] == '.' or candidate in seen:
            candidate = 'v{}_{}'.format(i, candidate)
        seen.add(candidate)
        cleaned.append(candidate)
    return cleaned


@dataclasses.dataclass(frozen=True)
class MilpSolution:
    """
    Outcome of :func:`~kgmc.milp.solve_milp`.
    """
    status: str
    x: typing.Optional[numpy.ndarray] = None
    objective: typing.Optional[float] = None
    nodes: int = 0

    @property
    def optimal(self) -> hints.Bool:
        return self.status == OPTIMAL

    def value(self, expr: LinExpr) -> hints.Float:
        return LinExpr.of(expr).value(self.x)


class _Relaxation(typing.NamedTuple):
    feasible: bool
    objective: float
    x: typing.Optional[numpy.ndarray]


class _LpSolver:
    """
    Solves LP relaxations of one model under per-node binary bounds.
    """

    def __init__(self, model: MilpModel, cfg: config.MergeConfig) -> None:
        self.c, self.a_ub, self.b_ub, self.a_eq, self.b_eq, self.bounds = model.to_arrays()
        self.options = {'primal_feasibility_tolerance': cfg.lp_tol, 'dual_feasibility_tolerance': cfg.lp_tol,
                        'presolve': True}

    @exceptions.reraise(ValueError, exceptions.SolverError, 'Linear relaxation rejected')
    def solve(self, fixes: typing.Mapping[int, float]) -> _Relaxation:
        bounds = self.bounds.copy()
        for v, value in fixes.items():
            bounds[v] = (value, value)
        if not len(self.c):
            return _Relaxation(True, 0.0, numpy.zeros(0))
        result = optimize.linprog(self.c, A_ub=self.a_ub, b_ub=self.b_ub, A_eq=self.a_eq, b_eq=self.b_eq,
                                  bounds=bounds, method='highs-ds', options=self.options)
        if result.status == 0:
            return _Relaxation(True, float(result.fun), numpy.asarray(result.x, dtype=float))
        if result.status == 2:
            return _Relaxation(False, math.inf, None)
        raise exceptions.SolverError('Linear relaxation failed with status {}: {}'.format(
            result.status, result.message))


def _branch_variable(x: numpy.ndarray, binaries: typing.Sequence[int], int_tol: hints.Float) -> typing.Optional[int]:
    """
    Most fractional binary, lowest index on ties; `None` when every binary is integral.
    """
    best, best_frac = None, int_tol
    for v in binaries:
        frac = min(x[v] - math.floor(x[v]), math.ceil(x[v]) - x[v])
        if frac > best_frac:
            best, best_frac = v, frac
    return best


def solve_milp(model: MilpModel, cfg: typing.Optional[config.MergeConfig] = None) -> MilpSolution:
    """
    Solve a model exactly by best-bound branch-and-bound.

    Each node solves the LP relaxation under its binary fixings with the HiGHS dual simplex and
    branches on the most fractional binary. Nodes are ordered by parent bound, then creation order.
    When a relaxation is integral its binaries are rounded and fixed and the LP is solved again,
    so the reported point satisfies every constraint without integrality leakage. If the rounded
    assignment is infeasible the node keeps branching on its unfixed binaries; only verified points
    become incumbents. With ``cfg.workers > 1`` batches of nodes are solved in a thread pool and
    processed in pop order.

    :param model: Model to solve
    :type model: :class:`~kgmc.milp.MilpModel`
    :param cfg: Solver tolerances and budgets
    :type cfg: :class:`~kgmc.config.MergeConfig` or :class:`~NoneType`
    :return: Optimal point or an infeasibility proof
    :rtype: :class:`~kgmc.milp.MilpSolution`
    :raises :class:`~kgmc.exceptions.SolverTimeoutError`: When the node or time budget runs out first
    """
    cfg = cfg or config.MergeConfig()
    lp = _LpSolver(model, cfg)
    binaries = model.binaries
    counter = itertools.count()
    heap = [(-math.inf, next(counter), {})]
    incumbent, best = None, math.inf
    nodes = 0
    pool = concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None

    def prune(bound):
        return bound >= best - cfg.lp_tol * max(1.0, abs(best)) if incumbent is not None else False

    try:
        with timeouts.Timeout(cfg.time_limit, cfg.node_limit) as budget:
            while heap:
                batch = []
                while heap and len(batch) < cfg.workers:
                    entry = heapq.heappop(heap)
                    if not prune(entry[0]):
                        batch.append(entry)
                if not batch:
                    continue
                if not budget.allows(len(batch)):
                    raise exceptions.SolverTimeoutError('Branch-and-bound stopped after {} nodes within {} without '
                                                        'proving optimality'.format(nodes, budget))
                budget.spend(len(batch))
                fixes = [entry[2] for entry in batch]
                relaxations = list(pool.map(lp.solve, fixes)) if pool else [lp.solve(f) for f in fixes]
                nodes += len(batch)
                for node_fixes, relaxation in zip(fixes, relaxations):
                    if not relaxation.feasible or prune(relaxation.objective):
                        continue
                    branch = _branch_variable(relaxation.x, binaries, cfg.int_tol)
                    if branch is None:
                        candidate = _polish(lp, relaxation, binaries, node_fixes)
                        if candidate is not None:
                            if candidate.objective < best:
                                incumbent, best = candidate, candidate.objective
                                log.debug('Node %d: incumbent objective %.9g', nodes, best)
                            continue
                        branch = _free_binary(relaxation.x, binaries, node_fixes)
                        if branch is None:
                            log.warning('Node %d of model %s has no feasible integral point; dropped', nodes,
                                        model.name)
                            continue
                        log.debug('Node %d: rounded binaries are infeasible; branching on %s', nodes,
                                  model.names[branch])
                    for value in (0.0, 1.0):
                        child = dict(node_fixes)
                        child[branch] = value
                        heapq.heappush(heap, (relaxation.objective, next(counter), child))
    finally:
        if pool is not None:
            pool.shutdown()

    if incumbent is None:
        log.info('Model %s is infeasible (%d nodes)', model.name, nodes)
        return MilpSolution(INFEASIBLE, nodes=nodes)
    x = incumbent.x.copy()
    x[numpy.abs(x) < cfg.lp_tol * 1e-3] = 0.0
    log.info('Model %s solved to optimality: objective %.9g after %d nodes', model.name, best, nodes)
    return MilpSolution(OPTIMAL, x, best, nodes)


def _polish(lp: _LpSolver, relaxation: _Relaxation, binaries: typing.Sequence[int],
            fixes: typing.Mapping[int, float]) -> typing.Optional[_Relaxation]:
    """
    Re-solve with every binary fixed at its rounded value; `None` when that assignment is infeasible.
    """
    rounded = dict(fixes)
    rounded.update((v, float(round(relaxation.x[v]))) for v in binaries)
    polished = lp.solve(rounded)
    return polished if polished.feasible else None


def _free_binary(x: numpy.ndarray, binaries: typing.Sequence[int],
                 fixes: typing.Mapping[int, float]) -> typing.Optional[int]:
    """
    Unfixed binary farthest from integral, lowest index on ties; `None` when every binary is fixed.
    """
    free = [v for v in binaries if v not in fixes]
    if not free:
        return None
    return max(free, key=lambda v: (min(x[v] - math.floor(x[v]), math.ceil(x[v]) - x[v]), -v))
