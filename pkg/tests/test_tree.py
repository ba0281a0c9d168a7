import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import binary, depth1, random_tree
from nlstop.errors import HorizonTooLarge, MalformedTree, NegativeReward, NonCanonicalRule, TreeMismatch
from nlstop.tree import (
    LatticeSpec,
    NodeProcess,
    StoppingRule,
    build_binomial,
    build_tree,
    canonicalize,
    join,
    make_rule,
    meet,
    rule_le,
    stop_at,
    stop_at_leaves,
    stop_at_time,
    stop_node,
)


def nodes(*items):
    return [{"id": i, "t": t, "parent": p} for i, t, p in items]


def test_smallest_branching_tree():
    tree = build_tree({"num_steps": 1, "nodes": nodes((0, 0, None), (1, 1, 0), (2, 1, 0))})
    assert tree.num_nodes == 3
    assert tree.children(0) == (1, 2)
    assert tree.leaves == (1, 2)


def test_child_skipping_a_time_is_rejected():
    with pytest.raises(MalformedTree):
        build_tree({"num_steps": 2, "nodes": nodes((0, 0, None), (1, 2, 0))})


def test_complete_binary_depth_two():
    tree = binary(2)
    assert tree.num_nodes == 7
    assert len(tree.leaves) == 4


@pytest.mark.parametrize(
    "bad",
    [
        nodes((0, 0, None), (1, 1, 7)),  # orphan
        nodes((0, 0, None), (1, 1, 0), (2, 1, None)),  # two roots
        nodes((0, 0, None), (1, 1, 0), (2, 1, 0), (3, 2, 1)),  # leaf 2 at t < N
        nodes((0, 0, None), (0, 1, 0)),  # duplicate id
        nodes((0, 1, None), (1, 2, 0)),  # root not at t = 0
    ],
)
def test_malformed_trees(bad):
    n = max(x["t"] for x in bad)
    with pytest.raises(MalformedTree):
        build_tree({"num_steps": n, "nodes": bad})


def test_children_must_match_parent_links():
    spec = {"num_steps": 1, "nodes": nodes((0, 0, None), (1, 1, 0), (2, 1, 0))}
    spec["nodes"][0]["children"] = [1]
    with pytest.raises(MalformedTree):
        build_tree(spec)


def test_binomial_one_step():
    tree, S = build_binomial(LatticeSpec(1, F(100), F(6, 5), F(4, 5)))
    assert tree.num_nodes == 3
    assert list(S.values) == [100, 120, 80]


def test_binomial_two_steps_leaf_prices():
    tree, S = build_binomial(LatticeSpec(2, F(1), F(2), F(1, 2)))
    assert [S[n] for n in tree.leaves] == [4, 1, 1, F(1, 4)]


def test_binomial_horizon_too_large():
    with pytest.raises(HorizonTooLarge):
        build_binomial(LatticeSpec(40, 1, 2, F(1, 2)), node_budget=10**6)


def test_binomial_passes_explicit_validation():
    tree, _ = build_binomial(LatticeSpec(4, 1, 2, F(1, 2)))
    assert build_tree(tree.to_dict()) == tree


def test_canonicalize_ancestor_wins():
    tree = depth1()
    r = canonicalize(StoppingRule(tree, frozenset({0, 1}), 0))
    assert r.flagged == {0}


def test_canonicalize_defaults_to_leaves():
    tree = binary(2)
    r = canonicalize(StoppingRule(tree, frozenset(), 0))
    assert r == stop_at_leaves(tree)


def test_canonicalize_keeps_canonical_rules():
    tree = binary(2)
    r = make_rule(tree, [1, 5, 6])
    assert canonicalize(r) == r


def test_stop_node_examples():
    tree = binary(2)
    root_rule = stop_at(tree, 0)
    assert all(stop_node(root_rule, leaf) == 0 for leaf in tree.leaves)
    leaves = stop_at_leaves(tree)
    assert all(stop_node(leaves, leaf) == leaf for leaf in tree.leaves)
    # up node is 1, its leaves 3 and 4; the down subtree stops at its leaves 5 and 6
    r = make_rule(tree, [1, 5, 6])
    assert stop_node(r, 3) == 1
    assert stop_node(r, 6) == 6


def test_stop_node_needs_canonical_rule():
    tree = binary(2)
    with pytest.raises(NonCanonicalRule):
        stop_node(StoppingRule(tree, frozenset({0, 1}), 0), 3)


def test_meet_examples():
    tree = binary(2)
    zero, last = stop_at(tree, 0), stop_at_leaves(tree)
    assert meet(zero, last) == zero
    a = make_rule(tree, [1, 5, 6])
    assert meet(a, a) == a
    b = make_rule(tree, [3, 4, 2])
    assert meet(a, b) == stop_at_time(tree, 1)


def test_meet_on_different_trees():
    with pytest.raises(TreeMismatch):
        meet(stop_at(binary(1), 0), stop_at(binary(2), 0))


def test_nonnegativity_reports_node():
    proc = NodeProcess((F(1), F(-2), F(0)))
    with pytest.raises(NegativeReward) as err:
        proc.check_nonnegative()
    assert err.value.node == 1


def _random_flags(seed):
    rng = random.Random(seed)
    tree = random_tree(rng, rng.randint(1, 4))
    flags = frozenset(n for n in range(tree.num_nodes) if rng.random() < 0.3)
    return tree, StoppingRule(tree, flags, tree.root)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9))
def test_canonicalize_idempotent_and_one_flag_per_path(seed):
    tree, raw = _random_flags(seed)
    c = canonicalize(raw)
    assert canonicalize(c) == c
    assert c.is_canonical
    for leaf in tree.leaves:
        assert sum(1 for n in tree.path_to(leaf) if n in c.flagged) == 1


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9), st.integers(0, 10**9))
def test_meet_and_join_are_pathwise_min_and_max(seed_a, seed_b):
    tree, a = _random_flags(seed_a)
    rng = random.Random(seed_b)
    b = canonicalize(StoppingRule(tree, frozenset(n for n in range(tree.num_nodes) if rng.random() < 0.3), 0))
    a = canonicalize(a)
    m, j = meet(a, b), join(a, b)
    for leaf in tree.leaves:
        ta, tb = tree.time(stop_node(a, leaf)), tree.time(stop_node(b, leaf))
        assert tree.time(stop_node(m, leaf)) == min(ta, tb)
        assert tree.time(stop_node(j, leaf)) == max(ta, tb)
    assert rule_le(m, a) and rule_le(m, b) and rule_le(a, j) and rule_le(b, j)
