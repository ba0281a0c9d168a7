"""Optimal d-fold stopping by reduction to a single stopping problem.

For a reward ``X(tau_1, ..., tau_d)`` the value at node ``m`` with
coordinate ``i`` frozen at ``m`` is ``u_i(m)``, the value of the
(d-1)-problem whose i-th slot is pinned to ``m`` and whose other slots stop
at-or-after ``m``. The d-problem's value is the Snell envelope of
``Xhat = max_i u_i``. An optimal vector is assembled from the minimal
optimal time ``theta`` of that reduced problem: on each stop node of
``theta`` the first coordinate attaining the max stops there and the
others follow the optimal (d-1)-vector of the frozen problem at that node.

For d = 2 this is the two-stop reduction with ``u_1(m) = sup E[X(tau, m)]``
and ``u_2(m) = sup E[X(m, tau)]``; note the index flip, ``u^(1)`` here
(slot 1 frozen) is the latter.

Frozen subproblems are solved on the subtree below the frozen node, so no
reward modification is needed to keep later coordinates after it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .engines import ExpectationEngine, _check_rule_from, pull_back
from .errors import (
    BudgetExceeded,
    CoordinateOutOfRange,
    LengthMismatch,
    MissingValues,
    NegativeReward,
    NodeNotInSubtree,
)
from .numeric import EqMode, format_number, is_exact, parse_number
from .single import SnellSolution, check_optimality, minimal_optimal, snell
from .tree import FiltrationTree, NodeProcess, StoppingRule, stop_at, stop_node

DEFAULT_EVAL_BUDGET = 2 * 10**6


class DReward:
    """Reward of ``arity`` stopping times, evaluated on comparable node tuples.

    The nodes passed to :meth:`__call__` lie on one root-to-leaf path; the
    value may depend on them in any way but must be nonnegative.
    """

    kind = "abstract"
    symmetric = False

    def __init__(self, tree: FiltrationTree, arity: int):
        if arity < 1:
            raise ValueError("arity must be >= 1")
        self.tree = tree
        self.arity = arity

    def __call__(self, nodes: Sequence[int]):
        if len(nodes) != self.arity:
            raise LengthMismatch(f"reward takes {self.arity} nodes, got {len(nodes)}")
        deepest = max(nodes, key=self.tree.time)
        for n in nodes:
            if not self.tree.is_ancestor_or_self(n, deepest):
                raise NodeNotInSubtree(f"nodes {tuple(nodes)} do not lie on one path")
        return self._eval(tuple(nodes))

    def _eval(self, nodes):
        raise NotImplementedError

    @property
    def base(self) -> "DReward":
        return self

    def memo_key(self, root: int):
        return (self, (), root)

    @property
    def exact(self) -> bool:
        return True


class Additive(DReward):
    """``sum_i Y(n_i)``."""

    kind = "additive"
    symmetric = True

    def __init__(self, tree, Y: NodeProcess, arity: int):
        super().__init__(tree, arity)
        Y.require_total(range(tree.num_nodes))
        Y.check_nonnegative()
        self.Y = Y

    def _eval(self, nodes):
        acc = 0
        for n in nodes:
            acc = acc + self.Y[n]
        return acc

    @property
    def exact(self):
        return all(is_exact(y) for y in self.Y.values)


class RefractionSwing(Additive):
    """``sum_i Y(n_i)`` when all exercise times are ``delta`` apart, else 0."""

    kind = "refraction_swing"

    def __init__(self, tree, Y: NodeProcess, arity: int, delta: int):
        super().__init__(tree, Y, arity)
        if delta < 0 or int(delta) != delta:
            raise ValueError("delta must be a nonnegative integer number of steps")
        self.delta = int(delta)

    def _eval(self, nodes):
        times = sorted(self.tree.time(n) for n in nodes)
        if any(b - a < self.delta for a, b in zip(times, times[1:])):
            return 0
        return super()._eval(nodes)


class TableReward(DReward):
    """Explicit ``{node tuple: value}`` map, with an optional default."""

    kind = "table"

    def __init__(self, tree, arity: int, table: Mapping, default=None):
        super().__init__(tree, arity)
        self.table = {}
        for key, value in table.items():
            key = tuple(int(n) for n in key)
            if len(key) != arity:
                raise LengthMismatch(f"table key {key} has length {len(key)}, arity {arity}")
            if value < 0:
                raise NegativeReward(key, value)
            self.table[key] = value
        if default is not None and default < 0:
            raise NegativeReward("default", default)
        self.default = default

    def _eval(self, nodes):
        v = self.table.get(nodes, self.default)
        if v is None:
            raise MissingValues(f"table reward undefined at {nodes}")
        return v

    @property
    def exact(self):
        vals = list(self.table.values()) + ([self.default] if self.default is not None else [])
        return all(is_exact(v) for v in vals)


class FrozenReward(DReward):
    """View of a reward with some slots pinned; free nodes must lie below ``root``."""

    kind = "frozen"

    def __init__(self, base: DReward, pinned: tuple, root: int):
        super().__init__(base.tree, base.arity - len(pinned))
        self._base = base
        self.pinned = pinned  # ((base slot, node), ...) in freezing order
        self.root = root
        taken = {slot for slot, _ in pinned}
        self.free_slots = tuple(k for k in range(base.arity) if k not in taken)

    @property
    def base(self):
        return self._base

    @property
    def symmetric(self):
        return self._base.symmetric

    @property
    def exact(self):
        return self._base.exact

    def _eval(self, nodes):
        for n in nodes:
            if not self.tree.is_ancestor_or_self(self.root, n):
                raise NodeNotInSubtree(f"node {n} is not below the frozen node {self.root}")
        full = [None] * self._base.arity
        for slot, n in self.pinned:
            full[slot] = n
        for slot, n in zip(self.free_slots, nodes):
            full[slot] = n
        return self._base._eval(tuple(full))

    def memo_key(self, root):
        if self._base.symmetric:
            return (self._base, tuple(sorted(n for _, n in self.pinned)), root)
        return (self._base, tuple(sorted(self.pinned)), root)


def freeze(reward: DReward, i: int, at: int) -> FrozenReward:
    """Pin coordinate ``i`` (1-based) to node ``at``; the rest live below ``at``."""
    if not 1 <= i <= reward.arity:
        raise CoordinateOutOfRange(f"coordinate {i} outside 1..{reward.arity}")
    if reward.arity < 2:
        raise CoordinateOutOfRange("cannot freeze the only coordinate")
    if isinstance(reward, FrozenReward):
        if not reward.tree.is_ancestor_or_self(reward.root, at):
            raise NodeNotInSubtree(f"node {at} is not below the frozen node {reward.root}")
        slot = reward.free_slots[i - 1]
        return FrozenReward(reward.base, reward.pinned + ((slot, at),), at)
    return FrozenReward(reward, ((i - 1, at),), at)


@dataclass(frozen=True)
class MultiSolution:
    """Solution of a d-stopping problem on the subtree of ``root``.

    ``coordinate_values[i]`` holds ``u^(i+1)``, ``reduced_reward`` the
    nodewise max ``Xhat``, ``value`` the Snell envelope of ``Xhat`` (equal to
    the d-problem's value), and ``witness`` maps each stop node of
    ``theta_star`` to the 1-based coordinate that stops there.
    """

    arity: int
    root: int
    value: NodeProcess
    reduced_reward: NodeProcess
    coordinate_values: tuple
    optimal_vector: tuple
    theta_star: StoppingRule
    witness: dict
    snell: SnellSolution = field(repr=False)

    @property
    def v_root(self):
        return self.value[self.root]


class SolutionCache:
    """Memo of subproblem solutions with insert-if-absent semantics.

    ``eq`` is the equality policy handed to every Snell solve (None: infer
    from the numbers).
    """

    def __init__(self, eq: EqMode | None = None):
        self.eq = eq
        self._data = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._data)

    def get_or_compute(self, key, compute):
        with self._lock:
            hit = self._data.get(key)
        if hit is not None:
            return hit
        value = compute()
        with self._lock:
            return self._data.setdefault(key, value)


def solve_d(
    engine: ExpectationEngine,
    reward: DReward,
    root_of: int | None = None,
    budget: int = DEFAULT_EVAL_BUDGET,
    cache: SolutionCache | None = None,
    eq: EqMode | None = None,
) -> MultiSolution:
    """Value process and an optimal stopping vector for ``reward``.

    The work grows like ``subtree_size ** d``; instances above ``budget``
    raise :class:`BudgetExceeded`.
    """
    tree = engine.tree
    root = tree.root if root_of is None else root_of
    if reward.tree != tree:
        raise NodeNotInSubtree("reward and engine live on different trees")
    cost = tree.subtree_size(root) ** reward.arity
    if reward.arity >= 2 and cost > budget:
        raise BudgetExceeded(f"solve_d with d={reward.arity}", cost, budget)
    cache = SolutionCache(eq) if cache is None else cache
    return _solve(engine, reward, root, cache)


def _solve(engine, reward, root, cache) -> MultiSolution:
    return cache.get_or_compute(
        reward.memo_key(root), lambda: _solve_uncached(engine, reward, root, cache)
    )


def _solve_uncached(engine, reward: DReward, root: int, cache: "SolutionCache") -> MultiSolution:
    tree = engine.tree
    nodes = tree.subtree(root)
    d = reward.arity
    size = tree.num_nodes
    if d == 1:
        X = [None] * size
        for n in nodes:
            X[n] = reward((n,))
        sol = snell(engine, NodeProcess(tuple(X)), root, cache.eq)
        tau = minimal_optimal(sol)
        return MultiSolution(
            arity=1,
            root=root,
            value=sol.value,
            reduced_reward=sol.reward,
            coordinate_values=(sol.reward,),
            optimal_vector=(tau,),
            theta_star=tau,
            witness={s: 1 for s in tau.stop_nodes},
            snell=sol,
        )

    u = [[None] * size for _ in range(d)]
    for m in nodes:
        for i in range(d):
            u[i][m] = _solve(engine, freeze(reward, i + 1, m), m, cache).value[m]
    xhat = [None] * size
    for m in nodes:
        best = u[0][m]
        for i in range(1, d):
            if u[i][m] > best:
                best = u[i][m]
        xhat[m] = best
    sol = snell(engine, NodeProcess(tuple(xhat)), root, cache.eq)
    theta = minimal_optimal(sol)

    flags = [set() for _ in range(d)]
    witness = {}
    for s in theta.stop_nodes:
        # smallest index attaining the max; xhat is one of the u's exactly
        i = next(k for k in range(d) if u[k][s] == xhat[s])
        witness[s] = i + 1
        flags[i].add(s)
        sub = _solve(engine, freeze(reward, i + 1, s), s, cache)
        for j in range(d):
            if j != i:
                flags[j] |= sub.optimal_vector[j if j < i else j - 1].flagged
    vector = tuple(StoppingRule(tree, frozenset(f), root) for f in flags)
    return MultiSolution(
        arity=d,
        root=root,
        value=sol.value,
        reduced_reward=sol.reward,
        coordinate_values=tuple(NodeProcess(tuple(row)) for row in u),
        optimal_vector=vector,
        theta_star=theta,
        witness=witness,
        snell=sol,
    )


def vector_nodes(vec: Sequence[StoppingRule], frm: int) -> dict:
    """``{leaf: (stop node of each component)}`` for the leaves below ``frm``."""
    tree = vec[0].tree
    for rule in vec:
        if rule.tree != tree:
            raise NodeNotInSubtree("components live on different trees")
        _check_rule_from(rule, frm)
    return {leaf: tuple(stop_node(r, leaf) for r in vec) for leaf in tree.leaves_under(frm)}


def vector_times(vec: Sequence[StoppingRule], frm: int | None = None) -> dict:
    frm = vec[0].root if frm is None else frm
    tree = vec[0].tree
    return {leaf: tuple(tree.time(n) for n in ns) for leaf, ns in vector_nodes(vec, frm).items()}


def evaluate_vector(engine: ExpectationEngine, reward: DReward, vec: Sequence[StoppingRule], frm: int | None = None):
    """``E_{t(frm)}[X(tau_1, ..., tau_d)]`` at the atom ``frm``."""
    if len(vec) != reward.arity:
        raise LengthMismatch(f"vector has {len(vec)} components, reward arity {reward.arity}")
    frm = vec[0].root if frm is None else frm
    tree = engine.tree
    per_leaf = vector_nodes(vec, frm)
    cut = {}
    for ns in per_leaf.values():
        # the value is known once the last component has stopped
        deepest = max(ns, key=tree.time)
        if deepest not in cut:
            cut[deepest] = reward(ns)
    return pull_back(engine, frm, cut)


def _precedes(a, b) -> bool:
    if len(a) == 1:
        return a[0] <= b[0]
    ma, mb = min(a), min(b)
    if ma < mb:
        return True
    if ma > mb:
        return False
    for i, ai in enumerate(a):
        if ai == ma:
            if b[i] != mb:
                return False
            if not _precedes(a[:i] + a[i + 1 :], b[:i] + b[i + 1 :]):
                return False
    return True


def prec_d(a: Sequence, b: Sequence) -> str:
    """Compare two time tuples in the recursive order: precedes, succeeds, equal or incomparable."""
    a, b = tuple(a), tuple(b)
    if len(a) != len(b) or not a:
        raise LengthMismatch(f"tuples of lengths {len(a)} and {len(b)}")
    if a == b:
        return "equal"
    if _precedes(a, b):
        return "precedes"
    if _precedes(b, a):
        return "succeeds"
    return "incomparable"


def dominating_vector(engine, reward, sol: MultiSolution, frm: int | None = None, budget=None, enumerated=None):
    """An optimal vector strictly below ``sol.optimal_vector`` in the pathwise order, or None.

    Enumerates every optimal vector with the oracle, unless ``enumerated``
    already holds its ``(value, optimal vectors)`` output from ``frm``.
    Returns ``sol.optimal_vector`` itself if it is not optimal at all.
    """
    from . import oracle

    frm = sol.root if frm is None else frm
    budget = oracle.DEFAULT_VECTOR_BUDGET if budget is None else budget
    if enumerated is None:
        enumerated = oracle.brute_value_d(engine, reward, frm, budget)
    best, optimal = enumerated
    mine = sol.optimal_vector
    if frm != sol.root:
        mine = tuple(restrict(r, frm) for r in mine)
    if evaluate_vector(engine, reward, mine, frm) != best:
        return mine
    ours = vector_times(mine, frm)
    for vec in optimal:
        theirs = vector_times(vec, frm)
        strictly = False
        for leaf, mt in ours.items():
            rel = prec_d(theirs[leaf], mt)
            if rel == "precedes":
                strictly = True
            elif rel != "equal":
                break
        else:
            if strictly:
                return vec
    return None


def is_d_minimal(engine, reward, sol: MultiSolution, frm: int | None = None, budget=None, enumerated=None) -> bool:
    """True iff no optimal vector precedes the solver's vector on every path and differs somewhere."""
    return dominating_vector(engine, reward, sol, frm, budget, enumerated) is None


def restrict(rule: StoppingRule, node: int) -> StoppingRule:
    """The rule seen from ``node``, valid when it does not stop strictly above ``node``."""
    _check_rule_from(rule, node)
    tree = rule.tree
    return StoppingRule(tree, frozenset(n for n in rule.flagged if tree.is_ancestor_or_self(node, n)), node)


@dataclass(frozen=True)
class NecessaryConditions:
    min_equals_theta: bool
    min_is_optimal: bool
    coordinates_optimal: bool
    failures: list


def check_necessary_conditions(engine, reward: DReward, sol: MultiSolution) -> NecessaryConditions:
    """Check what optimality forces on ``sol.optimal_vector``.

    The pathwise minimum must be optimal for the reduced single problem (and
    here equals ``theta_star``), and wherever coordinate ``i`` attains the
    minimum the remaining coordinates must be optimal for ``u^(i)`` there.
    """
    vec = sol.optimal_vector
    tree = engine.tree
    eq = sol.snell.eq
    failures = []
    mins = {}
    for leaf, ns in vector_nodes(vec, sol.root).items():
        mins[leaf] = min(ns, key=tree.time)
    theta_nodes = frozenset(mins.values())
    theta = StoppingRule(tree, theta_nodes, sol.root)
    min_equals_theta = theta == sol.theta_star
    cert = check_optimality(sol.snell, stop_at(tree, sol.root), theta)
    if not min_equals_theta:
        failures.append({"check": "min equals theta*", "min": sorted(theta_nodes)})
    if not cert.optimal:
        failures.append({"check": "min optimal for reduced problem"})
    coords_ok = True
    if sol.arity >= 2:
        for s in theta.stop_nodes:
            for i, rule in enumerate(vec):
                if s not in rule.flagged:
                    continue
                rest = tuple(restrict(r, s) for j, r in enumerate(vec) if j != i)
                got = evaluate_vector(engine, freeze(reward, i + 1, s), rest, s)
                want = sol.coordinate_values[i][s]
                if not eq.eq(got, want):
                    coords_ok = False
                    failures.append({"check": "coordinate optimal", "node": s, "coordinate": i + 1, "got": got, "want": want})
    return NecessaryConditions(min_equals_theta, cert.optimal, coords_ok, failures)


def recursive_minimality_check(engine, reward: DReward, sol: MultiSolution, cache: SolutionCache | None = None) -> bool:
    """Recursive characterisation of minimality, on the witness sets only.

    The minimum of the vector must be the minimal optimal time of the reduced
    problem, and on each witness set the remaining (d-1)-vector must pass
    the same test for the frozen problem.
    """
    cache = SolutionCache() if cache is None else cache
    vec = sol.optimal_vector
    tree = engine.tree
    mins = {leaf: min(ns, key=tree.time) for leaf, ns in vector_nodes(vec, sol.root).items()}
    theta = StoppingRule(tree, frozenset(mins.values()), sol.root)
    if theta != minimal_optimal(sol.snell):
        return False
    if sol.arity == 1:
        return True
    for s, i in sol.witness.items():
        frozen = freeze(reward, i, s)
        sub = _solve(engine, frozen, s, cache)
        rest = tuple(restrict(r, s) for j, r in enumerate(vec) if j != i - 1)
        if rest != sub.optimal_vector:
            return False
        if not recursive_minimality_check(engine, frozen, sub, cache):
            return False
    return True


def reward_from_dict(data: Mapping, tree: FiltrationTree, exact: bool = True) -> DReward:
    """Parse the reward section of a multi-stopping problem file."""
    num = lambda x: parse_number(x, exact)  # noqa: E731
    kind = data.get("kind")
    d = int(data["d"])
    if kind in ("additive", "refraction_swing"):
        Y = NodeProcess.from_values(tree, _values(data["Y"], num))
        if kind == "additive":
            return Additive(tree, Y, d)
        return RefractionSwing(tree, Y, d, int(data.get("delta", 1)))
    if kind == "table":
        entries = data["table"]
        if isinstance(entries, Mapping):
            table = {tuple(int(x) for x in k.split(",")): num(v) for k, v in entries.items()}
        else:
            table = {tuple(e["nodes"]): num(e["value"]) for e in entries}
        default = data.get("default")
        return TableReward(tree, d, table, None if default is None else num(default))
    raise ValueError(f"unknown reward kind {kind!r}")


def _values(raw, num):
    if isinstance(raw, Mapping):
        return {int(k): num(v) for k, v in raw.items()}
    return [num(v) for v in raw]


def reward_to_dict(reward: DReward) -> dict:
    if isinstance(reward, RefractionSwing):
        return {"kind": reward.kind, "d": reward.arity, "delta": reward.delta, "Y": [format_number(y) for y in reward.Y.values]}
    if isinstance(reward, Additive):
        return {"kind": reward.kind, "d": reward.arity, "Y": [format_number(y) for y in reward.Y.values]}
    if isinstance(reward, TableReward):
        out = {
            "kind": reward.kind,
            "d": reward.arity,
            "table": [{"nodes": list(k), "value": format_number(v)} for k, v in sorted(reward.table.items())],
        }
        if reward.default is not None:
            out["default"] = format_number(reward.default)
        return out
    raise ValueError(f"cannot serialise reward kind {reward.kind!r}")
