"""Single optimal stopping under a nonlinear expectation.

The value ``v(S) = esssup_{tau >= S} E_S[X(tau)]`` is computed by backward
induction, ``v = X`` at the leaves and ``v_n = max(X_n, E_n[v_{t+1}])``
elsewhere; time consistency of the engine makes the two agree, and
:mod:`nlstop.oracle` checks that against the definition by enumeration.

Finite trees aggregate every family automatically, so ``v(S)`` for a
stopping rule ``S`` is just ``v`` read at the stop nodes of ``S``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import anchors
from .checks import AxiomReport
from .engines import ExpectationEngine, pull_back, stopped_cut
from .errors import (
    BudgetExceeded,
    LambdaGridError,
    LambdaOutOfRange,
    NodeNotInSubtree,
    OrderViolation,
)
from .numeric import EqMode, is_exact, parse_number
from .tree import NodeProcess, StoppingRule, follows, random_rule, rule_le, stop_at


@dataclass(frozen=True)
class SnellSolution:
    value: NodeProcess
    reward: NodeProcess
    engine: ExpectationEngine = field(repr=False)
    eq: EqMode
    root: int

    @property
    def tree(self):
        return self.engine.tree

    @property
    def v_root(self):
        return self.value[self.root]


@dataclass(frozen=True)
class OptimalityCertificate:
    """Truth values of the three equivalent optimality statements for ``tau``.

    (a) ``v(S) = E_S[X(tau)]`` on every atom of S;
    (b) ``v(tau) = X(tau)`` and ``E[v(S)] = E[v(tau)]``;
    (c) ``E[v(S)] = E[X(tau)]``.
    """

    a: bool
    b: bool
    c: bool
    b_stops_on_contact: bool
    v_S: dict
    cond_X_tau: dict
    E_v_S: object
    E_v_tau: object
    E_X_tau: object

    @property
    def consistent(self) -> bool:
        return self.a == self.b == self.c

    @property
    def optimal(self) -> bool:
        return self.a and self.b and self.c


def snell(engine: ExpectationEngine, reward: NodeProcess, root: int | None = None, eq: EqMode | None = None) -> SnellSolution:
    """Value process of the stopping problem on the subtree of ``root``."""
    tree = engine.tree
    root = tree.root if root is None else root
    nodes = tree.subtree(root)
    reward.require_total(nodes)
    reward.check_nonnegative(nodes)
    if eq is None:
        exact = engine.exact and all(is_exact(reward[n]) for n in nodes)
        eq = EqMode(exact)
    v = [None] * tree.num_nodes
    for n in reversed(nodes):
        kids = tree.children(n)
        if not kids:
            v[n] = reward[n]
            continue
        cont = engine.one_step(n, [v[c] for c in kids])
        v[n] = reward[n] if reward[n] >= cont else cont
    return SnellSolution(NodeProcess(tuple(v)), reward, engine, eq, root)


def _check_rule(sol: SnellSolution, S: StoppingRule):
    if S.tree != sol.tree:
        raise NodeNotInSubtree("rule is on a different tree")
    if not sol.tree.is_ancestor_or_self(sol.root, S.root):
        raise NodeNotInSubtree(f"rule root {S.root} is outside the solved subtree")
    S._require_canonical()


def value_at(sol: SnellSolution, S: StoppingRule) -> dict:
    """The random variable v(S) as ``{stop node: value}``."""
    _check_rule(sol, S)
    return {s: sol.value[s] for s in S.stop_nodes}


def _first_hit(sol: SnellSolution, S: StoppingRule, hit) -> StoppingRule:
    tree = sol.tree
    flags = set()
    for s in S.stop_nodes:
        stack = [s]
        while stack:
            n = stack.pop()
            if tree.is_leaf(n) or hit(n):
                flags.add(n)
            else:
                stack.extend(tree.children(n))
    return StoppingRule(tree, frozenset(flags), S.root)


def minimal_optimal(sol: SnellSolution, S: StoppingRule | None = None) -> StoppingRule:
    """First time at-or-after S where the value meets the reward."""
    S = stop_at(sol.tree, sol.root) if S is None else S
    _check_rule(sol, S)
    v, X, eq = sol.value, sol.reward, sol.eq
    return _first_hit(sol, S, lambda n: eq.eq(v[n], X[n]))


def _as_lambda(sol: SnellSolution, lam):
    if isinstance(lam, str) or (sol.eq.exact and isinstance(lam, float)):
        lam = parse_number(lam, sol.eq.exact)
    if not 0 < lam < 1:
        raise LambdaOutOfRange(f"lambda must lie in (0, 1), got {lam}")
    return lam


def lambda_rule(sol: SnellSolution, S: StoppingRule, lam) -> StoppingRule:
    """First time at-or-after S where ``lam * v <= X``."""
    lam = _as_lambda(sol, lam)
    _check_rule(sol, S)
    v, X, eq = sol.value, sol.reward, sol.eq
    return _first_hit(sol, S, lambda n: eq.le(lam * v[n], X[n]))


def _expect(sol: SnellSolution, at: int, rule: StoppingRule, values):
    return pull_back(sol.engine, at, stopped_cut(rule, at, values))


def check_optimality(sol: SnellSolution, S: StoppingRule, tau: StoppingRule) -> OptimalityCertificate:
    """Evaluate the three equivalent optimality statements for ``tau`` from ``S``.

    Unconditional expectations are taken at ``S.root``.
    """
    _check_rule(sol, S)
    _check_rule(sol, tau)
    if tau.root != S.root:
        raise OrderViolation("tau and S must start from the same node")
    if not follows(tau, S):
        raise OrderViolation("tau stops before S on some path")
    v, X, eq = sol.value, sol.reward, sol.eq
    top = S.root
    v_S = {s: v[s] for s in S.stop_nodes}
    cond = {s: _expect(sol, s, tau, X) for s in S.stop_nodes}
    a = all(eq.eq(v_S[s], cond[s]) for s in S.stop_nodes)
    contact = all(eq.eq(v[n], X[n]) for n in tau.stop_nodes)
    E_v_S = _expect(sol, top, S, v)
    E_v_tau = _expect(sol, top, tau, v)
    E_X_tau = _expect(sol, top, tau, X)
    b = contact and eq.eq(E_v_S, E_v_tau)
    c = eq.eq(E_v_S, E_X_tau)
    return OptimalityCertificate(a, b, c, contact, v_S, cond, E_v_S, E_v_tau, E_X_tau)


@dataclass(frozen=True)
class LambdaRow:
    lam: object
    rule: StoppingRule
    E_X: object
    scaled_value: object
    bound_holds: bool
    value_preserved: bool
    monotone: bool
    below_tau_star: bool
    equals_tau_star: bool


@dataclass(frozen=True)
class EpsReport:
    rows: list
    tau_star: StoppingRule
    threshold: object

    @property
    def passed(self) -> bool:
        return all(
            r.bound_holds and r.value_preserved and r.monotone and r.below_tau_star
            and r.equals_tau_star == (r.lam > self.threshold)
            for r in self.rows
        )


def lambda_threshold(sol: SnellSolution, S: StoppingRule):
    """Smallest ``lbar`` with ``tau^lam = tau*`` for every ``lam > lbar``.

    It is the largest ratio ``X/v`` over the nodes where the minimal optimal
    rule continues, or 0 when it stops immediately.
    """
    tau = minimal_optimal(sol, S)
    tree = sol.tree
    v, X = sol.value, sol.reward
    atoms = set(S.stop_nodes)
    best = Fraction(0) if sol.eq.exact else 0.0
    for s in tau.stop_nodes:
        n = s
        while n not in atoms:
            n = tree.parent(n)
            if X[n] / v[n] > best:
                best = X[n] / v[n]
    return best


def eps_optimality_report(sol: SnellSolution, S: StoppingRule, lambdas) -> EpsReport:
    """Per-lambda table of tau^lam and the approximate-optimality checks."""
    lams = [_as_lambda(sol, x) for x in lambdas]
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise LambdaGridError("lambda grid must be strictly increasing")
    _check_rule(sol, S)
    eq = sol.eq
    v, X = sol.value, sol.reward
    tau_star = minimal_optimal(sol, S)
    E_v_S = _expect(sol, S.root, S, v)
    rows = []
    prev = None
    for lam in lams:
        rule = lambda_rule(sol, S, lam)
        E_X = _expect(sol, S.root, rule, X)
        preserved = all(eq.eq(_expect(sol, s, rule, v), v[s]) for s in S.stop_nodes)
        rows.append(
            LambdaRow(
                lam=lam,
                rule=rule,
                E_X=E_X,
                scaled_value=lam * E_v_S,
                bound_holds=eq.le(lam * E_v_S, E_X),
                value_preserved=preserved,
                monotone=prev is None or rule_le(prev, rule),
                below_tau_star=rule_le(rule, tau_star),
                equals_tau_star=rule == tau_star,
            )
        )
        prev = rule
    return EpsReport(rows, tau_star, lambda_threshold(sol, S))


def supermartingale_check(
    engine: ExpectationEngine,
    sol: SnellSolution,
    num_samples: int,
    seed,
    oracle_budget: int | None = None,
) -> AxiomReport:
    """Sampled checks that v is an E-supermartingale system and meets the sup formula.

    For random ordered pairs ``sigma <= tau``: ``E_sigma[v(tau)] <= v(sigma)``
    on every atom of sigma. For random S (when the enumeration fits the
    oracle budget): ``E[v(S)] = max over tau >= S of E[X(tau)]``.
    """
    from . import oracle

    budget = oracle.DEFAULT_RULE_BUDGET if oracle_budget is None else oracle_budget
    rng = random.Random(seed)
    tree, eq = sol.tree, sol.eq
    v, X = sol.value, sol.reward
    rep = AxiomReport()
    sup = rep.add("supermartingale", anchors.SUPERMARTINGALE)
    formula = rep.add("sup_formula", anchors.SUP_FORMULA)
    for k in range(num_samples):
        sigma = random_rule(tree, rng, root=sol.root)
        tau = sigma if rng.random() < 0.1 else random_rule(tree, rng, after=sigma)
        for s in sigma.stop_nodes:
            lhs = pull_back(engine, s, stopped_cut(tau, s, v))
            sup.record(
                eq.le(lhs, v[s]),
                lhs - v[s],
                {"sigma": sigma.node_list(), "tau": tau.node_list(), "atom": s, "E[v(tau)]": lhs, "v(sigma)": v[s]},
            )
        if k < 20:
            try:
                best = oracle.max_stopped_value(engine, X, sigma, budget)
            except BudgetExceeded:
                continue
            lhs = pull_back(engine, sol.root, stopped_cut(sigma, sol.root, v))
            formula.record(
                eq.eq(lhs, best),
                abs(lhs - best),
                {"S": sigma.node_list(), "E[v(S)]": lhs, "sup": best},
            )
    return rep
