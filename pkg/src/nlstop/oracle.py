"""Brute-force ground truth: enumerate every stopping rule on small trees.

The number of canonical rules on the subtree of ``n`` obeys
``T(leaf) = 1`` and ``T(n) = 1 + prod T(child)``: either stop at ``n`` or
pick an independent rule below each child. Values are computed straight
from the definitions (max over all rules, or over all d-vectors), with no
dynamic programming, so they are independent of the solvers they check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .engines import ExpectationEngine, pull_back, stopped_cut, stopped_value
from .errors import BudgetExceeded
from .numeric import EqMode
from .tree import FiltrationTree, NodeProcess, StoppingRule, stop_at

DEFAULT_RULE_BUDGET = 10**4
DEFAULT_VECTOR_BUDGET = 10**5


def count_rules(tree: FiltrationTree, node: int | None = None) -> int:
    node = tree.root if node is None else node
    counts = {}
    for n in reversed(tree.subtree(node)):
        kids = tree.children(n)
        counts[n] = 1 if not kids else 1 + math.prod(counts[c] for c in kids)
    return counts[node]


class RuleEnumeration:
    """Every canonical rule stopping at-or-after ``base``, in a fixed order."""

    def __init__(self, tree: FiltrationTree, base: StoppingRule):
        self.tree = tree
        self.base = base
        self.count = math.prod(count_rules(tree, s) for s in base.stop_nodes)
        self._memo = {}

    def __len__(self):
        return self.count

    def _flag_sets(self, n) -> list:
        hit = self._memo.get(n)
        if hit is not None:
            return hit
        out = [frozenset((n,))]
        kids = self.tree.children(n)
        if kids:
            for combo in itertools.product(*(self._flag_sets(c) for c in kids)):
                out.append(frozenset().union(*combo))
        self._memo[n] = out
        return out

    def __iter__(self):
        per_atom = [self._flag_sets(s) for s in self.base.stop_nodes]
        for combo in itertools.product(*per_atom):
            yield StoppingRule(self.tree, frozenset().union(*combo), self.base.root)


def enumerate_rules(tree: FiltrationTree, frm: StoppingRule | int | None = None, budget: int = DEFAULT_RULE_BUDGET) -> RuleEnumeration:
    """All canonical rules at-or-after ``frm`` (a rule, or a node meaning "stop there")."""
    if frm is None:
        frm = stop_at(tree, tree.root)
    elif isinstance(frm, int):
        frm = stop_at(tree, frm)
    enum = RuleEnumeration(tree, frm)
    if enum.count > budget:
        raise BudgetExceeded("rule enumeration", enum.count, budget)
    return enum


@dataclass(frozen=True)
class BruteResult:
    value: object
    argmax: list


def brute_value_single(engine: ExpectationEngine, reward: NodeProcess, frm: int | None = None, budget: int = DEFAULT_RULE_BUDGET) -> BruteResult:
    """Max of ``E_frm[X(tau)]`` over every rule from ``frm``, with all maximisers."""
    tree = engine.tree
    frm = tree.root if frm is None else frm
    values = [(rule, stopped_value(engine, reward, rule, frm)) for rule in enumerate_rules(tree, frm, budget)]
    eq = EqMode.for_values(*(v for _, v in values))
    best = max(v for _, v in values)
    return BruteResult(best, [rule for rule, v in values if eq.eq(v, best)])


def max_stopped_value(engine: ExpectationEngine, reward: NodeProcess, S: StoppingRule, budget: int = DEFAULT_RULE_BUDGET):
    """``max over tau >= S of E[X(tau)]``, expectation taken at ``S.root``."""
    best = None
    for rule in enumerate_rules(engine.tree, S, budget):
        v = pull_back(engine, S.root, stopped_cut(rule, S.root, reward))
        if best is None or v > best:
            best = v
    return best


def brute_value_d(engine: ExpectationEngine, reward, frm: int | None = None, budget: int = DEFAULT_VECTOR_BUDGET):
    """Max of ``E_frm[X(tau_1..tau_d)]`` over all d-vectors, and every optimal vector."""
    from .multi import evaluate_vector

    tree = engine.tree
    frm = tree.root if frm is None else frm
    enum = RuleEnumeration(tree, stop_at(tree, frm))
    total = enum.count**reward.arity
    if total > budget:
        raise BudgetExceeded(f"d-vector enumeration with d={reward.arity}", total, budget)
    rules = list(enum)
    values = []
    for vec in itertools.product(rules, repeat=reward.arity):
        values.append((vec, evaluate_vector(engine, reward, vec, frm)))
    eq = EqMode.for_values(*(v for _, v in values))
    best = max(v for _, v in values)
    return best, [vec for vec, v in values if eq.eq(v, best)]


def brute_pair_reduction(engine: ExpectationEngine, reward, root: int | None = None, budget: int = DEFAULT_RULE_BUDGET):
    """Two-stop reduction by enumeration, indexed by the free slot.

    ``u1(n) = max_tau E_n[X(tau, n)]`` (second slot pinned),
    ``u2(n) = max_tau E_n[X(n, tau)]`` (first slot pinned) and
    ``xtilde = max(u1, u2)``, for every node below ``root``.
    """
    if reward.arity != 2:
        raise ValueError("pair reduction needs a 2-stop reward")
    tree = engine.tree
    root = tree.root if root is None else root
    u1, u2 = {}, {}
    for n in tree.subtree(root):
        rules = list(enumerate_rules(tree, n, budget))
        first = NodeProcess.from_values(tree, {m: reward((m, n)) for m in tree.subtree(n)})
        second = NodeProcess.from_values(tree, {m: reward((n, m)) for m in tree.subtree(n)})
        u1[n] = max(stopped_value(engine, first, r, n) for r in rules)
        u2[n] = max(stopped_value(engine, second, r, n) for r in rules)
    xtilde = {n: max(u1[n], u2[n]) for n in u1}
    return u1, u2, xtilde
