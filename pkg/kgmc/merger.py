"""
    kgmc.merger
    ~~~~~~~~~~~

    Contains the non-overlap merge: big-M encodings of implications over shifted bounding
    rectangles, the merge program, its solution as per-entity shifts and their application.
"""
import dataclasses
import json
import logging
import typing

import numpy

from . import config, exceptions, geom, hints, index, milp
from .milp import LinExpr

__all__ = ['EpsilonShift', 'Comparison', 'Rect', 'ImplicationEncoder', 'MergeModel', 'MergePlan',
           'unmatched_targets', 'candidate_overlap_pairs', 'fixed_rect', 'shifted_rect', 'encode_implication',
           'encode_product_implication', 'encode_pair_nonoverlap', 'overlaps', 'build_merge_milp', 'solve_merge',
           'plan_merge', 'added_ids', 'apply_merge', 'position_merge_baseline']

log = logging.getLogger(__name__)

#: Prefix given to added target ids that collide with source ids.
COLLISION_PREFIX = 'target:'

#: Names of the shift components in storage order.
COMPONENTS = ('eps_c_x', 'eps_c_y', 'eps_1_x', 'eps_2_x', 'eps_1_y', 'eps_2_y')


@dataclasses.dataclass(frozen=True)
class EpsilonShift:
    """
    Center shift plus per-side shifts of an axis-aligned rectangle.

    Side 1 is the minimum and side 2 the maximum coordinate of each axis.
    """
    eps_c_x: float = 0.0
    eps_c_y: float = 0.0
    eps_1_x: float = 0.0
    eps_2_x: float = 0.0
    eps_1_y: float = 0.0
    eps_2_y: float = 0.0

    def as_list(self) -> typing.List[float]:
        return [getattr(self, name) for name in COMPONENTS]

    @property
    def is_zero(self) -> hints.Bool:
        return not any(self.as_list())

    def apply_to(self, box: geom.Mbr) -> geom.Mbr:
        """
        Shifted rectangle.

        :raises :class:`~kgmc.exceptions.GeometryError`: When the shift inverts the rectangle
        """
        return geom.Mbr(box.x_min + self.eps_c_x + self.eps_1_x, box.x_max + self.eps_c_x + self.eps_2_x,
                        box.y_min + self.eps_c_y + self.eps_1_y, box.y_max + self.eps_c_y + self.eps_2_y)

    def cost(self, gamma: hints.Float) -> hints.Float:
        center = abs(self.eps_c_x) + abs(self.eps_c_y)
        sides = abs(self.eps_1_x) + abs(self.eps_2_x) + abs(self.eps_1_y) + abs(self.eps_2_y)
        return gamma * sides + center


class Comparison(typing.NamedTuple):
    """
    Literal ``expr >= 0`` or, when strict, ``expr > 0``.
    """
    expr: LinExpr
    strict: bool = False

    @classmethod
    def ge(cls, left, right) -> 'Comparison':
        return cls(LinExpr.of(left) - right, False)

    @classmethod
    def gt(cls, left, right) -> 'Comparison':
        return cls(LinExpr.of(left) - right, True)


class Rect(typing.NamedTuple):
    """
    Rectangle sides as expressions: constants for fixed rectangles, affine in shifts for movable ones.
    """
    x1: LinExpr
    x2: LinExpr
    y1: LinExpr
    y2: LinExpr

    def shrink(self, amount: hints.Float) -> 'Rect':
        return Rect(self.x1 + amount, self.x2 - amount, self.y1 + amount, self.y2 - amount)


def fixed_rect(box: geom.Mbr) -> Rect:
    return Rect(LinExpr.of(box.x_min), LinExpr.of(box.x_max), LinExpr.of(box.y_min), LinExpr.of(box.y_max))


def shifted_rect(model: milp.MilpModel, entity_id: hints.EntityId, box: geom.Mbr, eps_max: hints.Float,
                 min_size: hints.Float = 0.0) -> typing.Tuple[Rect, typing.Dict[str, LinExpr]]:
    """
    Declare the six shift variables of a movable rectangle with their validity and movement constraints.

    Every component lies in ``[-eps_max, eps_max]``, every side moves at most ``eps_max`` in total
    and each side length of the shifted rectangle stays at least the smaller of its original length
    and ``min_size``, so shapes with extent never collapse.

    :param model: Model receiving the variables
    :type model: :class:`~kgmc.milp.MilpModel`
    :param entity_id: Id of the movable entity
    :type entity_id: :class:`~str`
    :param box: Original bounding rectangle
    :type box: :class:`~kgmc.geom.Mbr`
    :param eps_max: Movement bound
    :type eps_max: :class:`~float`
    :param min_size: Smallest side length kept by a rectangle that has at least this length
    :type min_size: :class:`~float`
    :return: Shifted sides and the shift variables by component name
    :rtype: :class:`~tuple`
    """
    eps = {name: model.add_var('{}.{}'.format(entity_id, name), -eps_max, eps_max) for name in COMPONENTS}
    x1 = eps['eps_c_x'] + eps['eps_1_x']
    x2 = eps['eps_c_x'] + eps['eps_2_x']
    y1 = eps['eps_c_y'] + eps['eps_1_y']
    y2 = eps['eps_c_y'] + eps['eps_2_y']
    tag = '{}.valid'.format(entity_id)
    for side in (x1, x2, y1, y2):
        model.add_constraint(side, '<=', eps_max, tag)
        model.add_constraint(side, '>=', -eps_max, tag)
    rect = Rect(x1 + box.x_min, x2 + box.x_max, y1 + box.y_min, y2 + box.y_max)
    model.add_constraint(rect.x2 - rect.x1, '>=', min(box.width, min_size), tag)
    model.add_constraint(rect.y2 - rect.y1, '>=', min(box.height, min_size), tag)
    return rect, eps


class ImplicationEncoder:
    """
    Compiles implications between comparisons into big-M constraints of a model.

    A condition literal gets one indicator binary ``u`` with ``u = 1`` exactly when the literal holds;
    a conjunction gets one binary ``t`` equal to the product of its indicators. Both are shared
    between every implication using the same literal or conjunction. Literals whose value is fixed
    over the variable bounds become constants and need no binary.

    Each inequality gets its own big-M from the bounds of its expression, capped by ``big_m``.
    """

    def __init__(self, model: milp.MilpModel, big_m: hints.Float, slack: hints.Float = config.MergeConfig.strict_slack,
                 prefix: hints.Str = '') -> None:
        self.model = model
        self.big_m = big_m
        self.slack = slack
        self.prefix = prefix
        self._indicators = {}
        self._conjunctions = {}
        self._count = 0

    def _name(self, kind: hints.Str) -> hints.Str:
        self._count += 1
        return '{}{}{}'.format(self.prefix, kind, self._count)

    def _margin(self, need: hints.Float) -> hints.Float:
        """
        Big-M that relaxes an inequality whose violation can reach ``need``.
        """
        if need > self.big_m:
            raise exceptions.ConfigError('big_m {} is smaller than the required {}'.format(self.big_m, need))
        return min(max(need, 0.0) + 1.0, self.big_m)

    def truth(self, literal: Comparison) -> typing.Optional[bool]:
        """
        Value of a literal over the whole variable box, or `None` when it depends on the point.
        """
        lo, hi = self.model.bounds_of(literal.expr)
        if literal.strict:
            if lo >= self.slack:
                return True
            if hi <= 0:
                return False
        else:
            if lo >= 0:
                return True
            if hi < 0:
                return False
        return None

    def _holds(self, literal: Comparison, relax: LinExpr, tag: hints.Str) -> None:
        """
        Require a literal unless ``relax`` (a sum of binaries or their complements) is positive.
        """
        expr = literal.expr - self.slack if literal.strict else literal.expr
        lo, _ = self.model.bounds_of(expr)
        if relax.is_constant and relax.const == 0:
            self.model.add_constraint(expr, '>=', 0.0, tag)
            return
        m = self._margin(-lo)
        self.model.add_constraint(expr + relax * m, '>=', 0.0, tag)

    def indicator(self, literal: Comparison, tag: hints.Str = ''):
        """
        Binary expression equal to 1 exactly when the literal holds, or a constant bool.
        """
        known = self.truth(literal)
        if known is not None:
            return known
        key = (literal.expr.key(), literal.strict)
        if key in self._indicators:
            return self._indicators[key]
        u = self.model.add_var(self._name('u'), binary=True)
        expr = literal.expr
        lo, hi = self.model.bounds_of(expr)
        if literal.strict:
            # u = 1 => expr >= slack; u = 0 => expr <= 0
            self.model.add_constraint(expr - self.slack + (1 - u) * self._margin(self.slack - lo), '>=', 0.0, tag)
            self.model.add_constraint(expr - u * self._margin(hi), '<=', 0.0, tag)
        else:
            # u = 1 => expr >= 0; u = 0 => expr <= -slack
            self.model.add_constraint(expr + (1 - u) * self._margin(-lo), '>=', 0.0, tag)
            self.model.add_constraint(expr - u * self._margin(hi + self.slack), '<=', -self.slack, tag)
        self._indicators[key] = u
        return u

    def conjunction(self, literals: typing.Sequence[Comparison], tag: hints.Str = ''):
        """
        Binary expression equal to 1 exactly when every literal holds, or a constant bool.
        """
        indicators = []
        for literal in literals:
            u = self.indicator(literal, tag)
            if u is False:
                return False
            if u is not True:
                indicators.append(u)
        if not indicators:
            return True
        if len(indicators) == 1:
            return indicators[0]
        key = tuple(sorted(next(iter(u.coefs)) for u in indicators))
        if key in self._conjunctions:
            return self._conjunctions[key]
        t = self.model.add_var(self._name('t'), binary=True)
        total = sum(indicators[1:], indicators[0])
        n = len(indicators)
        self.model.add_constraint(total - t * n, '>=', 0.0, tag)
        self.model.add_constraint(total - t * n, '<=', n - 1, tag)
        self._conjunctions[key] = t
        return t

    def implication(self, condition: typing.Sequence[Comparison], consequent: typing.Sequence[Comparison],
                    tag: hints.Str = '') -> None:
        """
        Encode ``and(condition) => or(consequent)`` with one or two consequent literals.
        """
        t = self.conjunction(condition, tag)
        if t is False:
            return
        gate = LinExpr() if t is True else 1 - t
        options = []
        for literal in consequent:
            known = self.truth(literal)
            if known is True:
                return
            if known is None:
                options.append(literal)
        if not options:
            self._forbid(t, tag)
        elif len(options) == 1:
            self._holds(options[0], gate, tag)
        else:
            if len(options) != 2:
                raise exceptions.ConflationError('Disjunctions of more than two literals are not supported')
            w = self.model.add_var(self._name('w'), binary=True)
            self._holds(options[0], gate + (1 - w), tag)
            self._holds(options[1], gate + w, tag)

    def product_implication(self, condition: typing.Sequence[Comparison], first: LinExpr, second: LinExpr,
                            tag: hints.Str = '') -> None:
        """
        Encode ``and(condition) => first * second >= 0``: both factors non-negative or both non-positive.
        """
        t = self.conjunction(condition, tag)
        if t is False:
            return
        gate = LinExpr() if t is True else 1 - t
        signs = []
        for sign in (1.0, -1.0):
            literals = [Comparison(first * sign), Comparison(second * sign)]
            truths = [self.truth(literal) for literal in literals]
            if all(v is True for v in truths):
                return
            if not any(v is False for v in truths):
                signs.append([lit for lit, v in zip(literals, truths) if v is None])
        if not signs:
            self._forbid(t, tag)
        elif len(signs) == 1:
            for literal in signs[0]:
                self._holds(literal, gate, tag)
        else:
            w = self.model.add_var(self._name('w'), binary=True)
            for literal in signs[0]:
                self._holds(literal, gate + w, tag)
            for literal in signs[1]:
                self._holds(literal, gate + (1 - w), tag)

    def _forbid(self, t, tag: hints.Str) -> None:
        if t is True:
            self.model.add_constraint(LinExpr(const=1.0), '<=', 0.0, tag)
        else:
            self.model.add_constraint(t, '<=', 0.0, tag)


def encode_implication(encoder: ImplicationEncoder, condition: typing.Sequence[Comparison],
                       consequent: typing.Sequence[Comparison], tag: hints.Str = '') -> None:
    """
    Encode ``and(condition) => first or second``.

    Every condition literal is tied to an indicator, the conjunction to ``t``, and the two consequent
    literals are switched by ``w``; all relaxed by ``1 - t`` so a false condition leaves them free.

    :param encoder: Encoder of the target model
    :type encoder: :class:`~kgmc.merger.ImplicationEncoder`
    :param condition: Conjunction of comparisons
    :type condition: :class:`~list`
    :param consequent: One or two comparisons of which one must hold
    :type consequent: :class:`~list`
    :param tag: Tag of the emitted constraints
    :type tag: :class:`~str`
    """
    encoder.implication(condition, consequent, tag)


def encode_product_implication(encoder: ImplicationEncoder, condition: typing.Sequence[Comparison],
                               first: LinExpr, second: LinExpr, tag: hints.Str = '') -> None:
    """
    Encode ``and(condition) => first * second >= 0`` with a shared-sign binary.

    :param encoder: Encoder of the target model
    :type encoder: :class:`~kgmc.merger.ImplicationEncoder`
    :param condition: Conjunction of comparisons
    :type condition: :class:`~list`
    :param first: First factor
    :type first: :class:`~kgmc.milp.LinExpr`
    :param second: Second factor
    :type second: :class:`~kgmc.milp.LinExpr`
    :param tag: Tag of the emitted constraints
    :type tag: :class:`~str`
    """
    encoder.product_implication(condition, LinExpr.of(first), LinExpr.of(second), tag)


def _in_range(value: LinExpr, lo: LinExpr, hi: LinExpr, low_side: hints.Bool) -> typing.List[Comparison]:
    """
    ``value`` in ``[lo, hi)`` for a minimum side, ``(lo, hi]`` for a maximum side.
    """
    if low_side:
        return [Comparison.ge(value, lo), Comparison.gt(hi, value)]
    return [Comparison.gt(value, lo), Comparison.ge(hi, value)]


def _not_in_range(value: LinExpr, lo: LinExpr, hi: LinExpr, low_side: hints.Bool) -> typing.List[Comparison]:
    if low_side:
        return [Comparison.gt(lo, value), Comparison.ge(value, hi)]
    return [Comparison.ge(lo, value), Comparison.gt(value, hi)]


def _vertex_families(encoder: ImplicationEncoder, r: Rect, s: Rect, tag: hints.Str) -> None:
    """
    Vertices of ``r`` whose x lies in the x-range of ``s`` keep their y out of the y-range of ``s``,
    and the vertical edges of ``r`` at those x do not cross a horizontal edge of ``s``.
    """
    for x, low_x in ((r.x1, True), (r.x2, False)):
        condition = _in_range(x, s.x1, s.x2, low_x)
        for y, low_y in ((r.y1, True), (r.y2, False)):
            encoder.implication(condition, _not_in_range(y, s.y1, s.y2, low_y), tag)
        for edge in (s.y1, s.y2):
            encoder.product_implication(condition, r.y1 - edge, r.y2 - edge, tag)


def encode_pair_nonoverlap(encoder: ImplicationEncoder, r: Rect, s: Rect, tag: hints.Str = '',
                           contact_tolerance: hints.Float = 0.0) -> None:
    """
    Constrain two rectangles to have disjoint interiors.

    For each rectangle in turn, a vertex of it whose x coordinate lies in the x-range of the other
    keeps its y coordinate out of the other's y-range, and its vertical edges do not cross the
    other's horizontal edges. Minimum sides use half-open ranges ``[lo, hi)`` and maximum sides
    ``(lo, hi]``, so rectangles touching along an edge are allowed and identical rectangles are not.
    Both rectangles are shrunk by half the contact tolerance on every side first.

    :param encoder: Encoder of the target model
    :type encoder: :class:`~kgmc.merger.ImplicationEncoder`
    :param r: First rectangle
    :type r: :class:`~kgmc.merger.Rect`
    :param s: Second rectangle
    :type s: :class:`~kgmc.merger.Rect`
    :param tag: Tag of the emitted constraints
    :type tag: :class:`~str`
    :param contact_tolerance: Overlap depth tolerated
    :type contact_tolerance: :class:`~float`
    """
    if contact_tolerance > 0:
        r, s = r.shrink(contact_tolerance / 2.0), s.shrink(contact_tolerance / 2.0)
    _vertex_families(encoder, r, s, tag)
    _vertex_families(encoder, s, r, tag)


def overlaps(a: geom.Mbr, b: geom.Mbr, tolerance: hints.Float = 0.0) -> hints.Bool:
    """
    Whether two rectangles share interior points, the predicate :func:`encode_pair_nonoverlap` rules out.
    """
    a = geom.Mbr(a.x_min + tolerance / 2, a.x_max - tolerance / 2, a.y_min + tolerance / 2, a.y_max - tolerance / 2) \
        if tolerance else a
    b = geom.Mbr(b.x_min + tolerance / 2, b.x_max - tolerance / 2, b.y_min + tolerance / 2, b.y_max - tolerance / 2) \
        if tolerance else b
    return a.x_min < b.x_max and b.x_min < a.x_max and a.y_min < b.y_max and b.y_min < a.y_max


def unmatched_targets(match_set, g_t: geom.Gdb, include_segments: hints.Bool = True) -> typing.Dict[str, geom.Mbr]:
    """
    Bounding rectangles of the target shapes absent from a match set.

    :param match_set: Accepted matches
    :type match_set: :class:`~kgmc.matcher.MatchSet`
    :param g_t: Target database
    :type g_t: :class:`~kgmc.geom.Gdb`
    :param include_segments: Include segments as well as polygons
    :type include_segments: :class:`~bool`
    :return: Id to rectangle, in database order
    :rtype: :class:`~dict`
    """
    matched = match_set.matched_target_ids
    shapes = list(g_t.entities) + (list(g_t.segments) if include_segments else [])
    return {s.id: geom.mbr(s) for s in shapes if s.id not in matched}


def candidate_overlap_pairs(fixed: typing.Mapping[str, geom.Mbr], movable: typing.Mapping[str, geom.Mbr],
                            eps_max: hints.Float) -> typing.List[hints.IdPair]:
    """
    Pairs that may overlap after shifting: a movable rectangle inflated by ``eps_max`` against fixed
    rectangles, and by ``2 * eps_max`` against the other movable rectangles.

    :param fixed: Fixed rectangles by id
    :type fixed: :class:`~dict`
    :param movable: Movable rectangles by id
    :type movable: :class:`~dict`
    :param eps_max: Movement bound
    :type eps_max: :class:`~float`
    :return: (movable id, other id) pairs; movable-movable pairs appear once, in movable order
    :rtype: :class:`~list`
    """
    fixed_index = index.build_index(list(fixed.items()))
    movable_index = index.build_index(list(movable.items()))
    order = {i: k for k, i in enumerate(movable)}
    pairs = []
    for movable_id, box in movable.items():
        pairs.extend((movable_id, other) for other in fixed_index.query(box.inflate(eps_max)))
        pairs.extend((movable_id, other) for other in movable_index.query(box.inflate(2 * eps_max))
                     if order[other] > order[movable_id])
    return pairs


@dataclasses.dataclass
class MergeModel:
    """
    Merge program with the shift variables of every movable rectangle.
    """
    model: milp.MilpModel
    shifts: typing.Dict[str, typing.Dict[str, LinExpr]]
    pairs: typing.List[hints.IdPair]
    big_m: float


def _extent(boxes: typing.Iterable[geom.Mbr]) -> hints.Float:
    boxes = list(boxes)
    if not boxes:
        return 0.0
    union = boxes[0]
    for box in boxes[1:]:
        union = union.union(box)
    return union.diagonal


def build_merge_milp(pairs: typing.Sequence[hints.IdPair], fixed: typing.Mapping[str, geom.Mbr],
                     movable: typing.Mapping[str, geom.Mbr], cfg: config.MergeConfig) -> MergeModel:
    """
    Assemble the merge program.

    The objective is ``gamma`` times the absolute side shifts plus the absolute center shifts, each
    linearized by an auxiliary bounding the value from both sides. Every pair contributes its
    non-overlap constraints, tagged ``<movable>|<other>``.

    :param pairs: (movable id, other id) pairs to keep apart
    :type pairs: :class:`~list`
    :param fixed: Fixed rectangles by id
    :type fixed: :class:`~dict`
    :param movable: Movable rectangles by id
    :type movable: :class:`~dict`
    :param cfg: Merge configuration
    :type cfg: :class:`~kgmc.config.MergeConfig`
    :return: Merge program
    :rtype: :class:`~kgmc.merger.MergeModel`
    :raises :class:`~kgmc.exceptions.ConfigError`: When big-M cannot dominate the scene
    """
    involved = sorted({i for pair in pairs for i in pair}, key=lambda i: (i not in movable, i))
    big_m = cfg.resolve_big_m(_extent([movable[i] if i in movable else fixed[i] for i in involved]))
    model = milp.MilpModel('merge')
    rects, shifts = {}, {}
    for entity_id in involved:
        if entity_id in movable:
            rects[entity_id], shifts[entity_id] = shifted_rect(model, entity_id, movable[entity_id], cfg.eps_max,
                                                                       cfg.strict_slack)
            for name, var in shifts[entity_id].items():
                weight = 1.0 if name.startswith('eps_c') else cfg.gamma
                model.add_abs_cost(var, weight, '{}.abs_{}'.format(entity_id, name))
        else:
            rects[entity_id] = fixed_rect(fixed[entity_id])

    encoder = ImplicationEncoder(model, big_m, cfg.strict_slack)
    for first, second in pairs:
        if first not in movable:
            raise exceptions.ConflationError('Pair {} does not start with a movable id'.format((first, second)))
        encode_pair_nonoverlap(encoder, rects[first], rects[second], '{}|{}'.format(first, second),
                               cfg.contact_tolerance)
    log.info('Merge program: %d pairs, %d variables, %d binaries, %d constraints', len(pairs), model.n_vars,
             len(model.binaries), len(model.constraints))
    return MergeModel(model, shifts, list(pairs), big_m)


@dataclasses.dataclass(frozen=True)
class MergePlan:
    """
    Shift of every movable rectangle with the objective and status of the merge program.
    """
    shifts: typing.Dict[str, EpsilonShift]
    objective: float = 0.0
    status: str = milp.OPTIMAL
    infeasible_pairs: typing.Tuple[hints.IdPair, ...] = ()
    nodes: int = 0

    @property
    def optimal(self) -> hints.Bool:
        return self.status == milp.OPTIMAL

    def shift(self, entity_id: hints.EntityId) -> EpsilonShift:
        return self.shifts.get(entity_id, EpsilonShift())

    def as_dict(self) -> typing.Dict:
        return {
            'status': self.status,
            'objective': self.objective,
            'nodes': self.nodes,
            'shifts': {i: dict(zip(COMPONENTS, s.as_list())) for i, s in self.shifts.items()},
            'infeasible_pairs': [list(p) for p in self.infeasible_pairs],
        }

    def save(self, path: hints.Str) -> None:
        with open(path, 'w') as f:
            json.dump(self.as_dict(), f, indent=1, sort_keys=True)
            f.write('\n')

    @classmethod
    def load(cls, path: hints.Str) -> 'MergePlan':
        try:
            with open(path, 'r') as f:
                payload = json.load(f)
        except (OSError, ValueError) as ex:
            raise exceptions.ConflationError('Unable to read merge plan {}: {}'.format(path, ex)) from ex
        shifts = {i: EpsilonShift(**values) for i, values in payload['shifts'].items()}
        return cls(shifts, payload['objective'], payload['status'],
                   tuple(tuple(p) for p in payload.get('infeasible_pairs', ())), payload.get('nodes', 0))


def solve_merge(merge_model: MergeModel, cfg: config.MergeConfig) -> MergePlan:
    """
    Solve a merge program into a plan; an infeasible program yields an infeasible plan without shifts.

    :param merge_model: Merge program
    :type merge_model: :class:`~kgmc.merger.MergeModel`
    :param cfg: Merge configuration
    :type cfg: :class:`~kgmc.config.MergeConfig`
    :return: Merge plan
    :rtype: :class:`~kgmc.merger.MergePlan`
    """
    solution = milp.solve_milp(merge_model.model, cfg)
    if not solution.optimal:
        return MergePlan({}, 0.0, solution.status, nodes=solution.nodes)
    shifts = {
        entity_id: EpsilonShift(**{name: solution.value(var) for name, var in variables.items()})
        for entity_id, variables in merge_model.shifts.items()
    }
    return MergePlan(shifts, float(solution.objective), solution.status, nodes=solution.nodes)


def _diagnose(pairs, fixed, movable, cfg) -> typing.Tuple[hints.IdPair, ...]:
    """
    Pairs infeasible on their own, or every pair when only their combination is.
    """
    alone = []
    for pair in pairs:
        plan = solve_merge(build_merge_milp([pair], fixed, movable, cfg), cfg)
        if not plan.optimal:
            alone.append(pair)
    return tuple(alone or pairs)


def plan_merge(g_s: geom.Gdb, g_t: geom.Gdb, match_set, cfg: config.MergeConfig) -> typing.Tuple[MergePlan,
                                                                                                 MergeModel]:
    """
    Plan the shifts that place every unmatched target shape without overlapping the source or each other.

    Source shapes are fixed. Segment pairs are not constrained against each other since road
    networks meet and cross by construction.

    :param g_s: Source database
    :type g_s: :class:`~kgmc.geom.Gdb`
    :param g_t: Target database
    :type g_t: :class:`~kgmc.geom.Gdb`
    :param match_set: Accepted matches
    :type match_set: :class:`~kgmc.matcher.MatchSet`
    :param cfg: Merge configuration
    :type cfg: :class:`~kgmc.config.MergeConfig`
    :return: Plan and the program it solves
    :rtype: :class:`~tuple`
    """
    movable = unmatched_targets(match_set, g_t, cfg.include_segments)
    fixed_shapes = list(g_s.entities) + (list(g_s.segments) if cfg.include_segments else [])
    fixed = {'source:{}'.format(s.id): geom.mbr(s) for s in fixed_shapes}
    kinds = {'source:{}'.format(s.id): s.kind for s in fixed_shapes}
    kinds.update((i, g_t.kind(i)) for i in movable)
    pairs = [p for p in candidate_overlap_pairs(fixed, movable, cfg.eps_max)
             if not (kinds[p[0]] == geom.SEGMENT and kinds[p[1]] == geom.SEGMENT)]
    log.info('Merging %d unmatched target shapes against %d source shapes: %d candidate pairs', len(movable),
             len(fixed), len(pairs))
    merge_model = build_merge_milp(pairs, fixed, movable, cfg)
    plan = solve_merge(merge_model, cfg)
    if not plan.optimal:
        blamed = _diagnose(pairs, fixed, movable, cfg)
        plan = dataclasses.replace(plan, infeasible_pairs=tuple(
            (a, b.split(':', 1)[1] if b.startswith('source:') else b) for a, b in blamed))
        log.warning('Merge is infeasible; conflicting pairs: %s', list(plan.infeasible_pairs)[:10])
    return plan, merge_model


def added_ids(g_s: geom.Gdb, g_t: geom.Gdb, match_set) -> typing.Dict[str, str]:
    """
    Merged id of every unmatched target shape, mapped to its target id.

    Target ids that collide with a source id get the ``target:`` prefix.
    """
    matched = match_set.matched_target_ids
    source_ids = set(g_s.ids)
    renamed = {}
    for target_id in g_t.ids:
        if target_id in matched:
            continue
        merged_id = COLLISION_PREFIX + target_id if target_id in source_ids else target_id
        renamed[merged_id] = target_id
    return renamed


def _interpolate(value: hints.Float, lo: hints.Float, hi: hints.Float, new_lo: hints.Float,
                 new_hi: hints.Float) -> hints.Float:
    if hi == lo:
        return value + (new_lo - lo)
    return new_lo + (value - lo) * (new_hi - new_lo) / (hi - lo)


def _move(coords: typing.Sequence[hints.Coordinate], box: geom.Mbr, shift: EpsilonShift) -> typing.List:
    if shift.is_zero:
        return list(coords)
    moved = shift.apply_to(box)
    return [(_interpolate(x, box.x_min, box.x_max, moved.x_min, moved.x_max),
             _interpolate(y, box.y_min, box.y_max, moved.y_min, moved.y_max)) for x, y in coords]


def apply_merge(g_s: geom.Gdb, g_t: geom.Gdb, match_set, plan: MergePlan) -> geom.Gdb:
    """
    Source database plus every unmatched target shape moved by its shift.

    Vertices move with the sides of their bounding rectangle and points in between are interpolated
    proportionally. Source shapes and their feature vectors are carried over unchanged; added
    shapes are encoded against the source vocabulary and scaled like the source.

    :param g_s: Source database
    :type g_s: :class:`~kgmc.geom.Gdb`
    :param g_t: Target database
    :type g_t: :class:`~kgmc.geom.Gdb`
    :param match_set: Accepted matches
    :type match_set: :class:`~kgmc.matcher.MatchSet`
    :param plan: Optimal merge plan
    :type plan: :class:`~kgmc.merger.MergePlan`
    :return: Merged database
    :rtype: :class:`~kgmc.geom.Gdb`
    :raises :class:`~kgmc.exceptions.InfeasibleMergeError`: When the plan is not optimal
    """
    if not plan.optimal:
        raise exceptions.InfeasibleMergeError('Cannot apply a {} merge plan'.format(plan.status),
                                              plan.infeasible_pairs)
    renamed = added_ids(g_s, g_t, match_set)
    source_ways = {s.way_id for s in g_s.segments}
    entities, segments = list(g_s.entities), list(g_s.segments)
    properties = {i: dict(g_s.properties.get(i, {})) for i in g_s.ids}
    for merged_id, target_id in renamed.items():
        if merged_id != target_id:
            log.warning('Target id %s collides with a source id; added as %s', target_id, merged_id)
        shape = g_t.get(target_id)
        coords = _move(shape.coords, geom.mbr(shape), plan.shift(target_id))
        if isinstance(shape, geom.PolyEntity):
            entities.append(geom.PolyEntity.from_coords(merged_id, coords))
        else:
            way_id = COLLISION_PREFIX + shape.way_id if shape.way_id in source_ways else shape.way_id
            segments.append(geom.Segment(merged_id, coords, way_id))
        properties[merged_id] = dict(g_t.properties.get(target_id, {}))
    source_shapes = list(g_s.entities) + list(g_s.segments)
    added = entities[len(g_s.entities):] + segments[len(g_s.segments):]
    features, names = geom.assemble_features(added, properties, g_s.vocabulary, reference=source_shapes)
    features.update((i, numpy.array(g_s.features[i], dtype=float)) for i in g_s.ids)
    merged = geom.Gdb(tuple(entities), tuple(segments), features, names, properties, dict(g_s.vocabulary))
    log.info('Merged database: %d source shapes plus %d target shapes', len(g_s), len(renamed))
    return merged


def position_merge_baseline(g_s: geom.Gdb, g_t: geom.Gdb, match_set) -> geom.Gdb:
    """
    Source database plus every unmatched target shape at its original position.
    """
    return apply_merge(g_s, g_t, match_set, MergePlan({}))
