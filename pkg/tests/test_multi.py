import dataclasses
import itertools
import random
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import HALF, PRIORS, binary, depth1, random_engine, random_process, random_tree
from nlstop import oracle
from nlstop.engines import Linear, UpperPrior, stopped_value
from nlstop.errors import (
    BudgetExceeded,
    CoordinateOutOfRange,
    LengthMismatch,
    NegativeReward,
    NodeNotInSubtree,
    OrderViolation,
)
from nlstop.multi import (
    Additive,
    RefractionSwing,
    SolutionCache,
    TableReward,
    check_necessary_conditions,
    evaluate_vector,
    freeze,
    is_d_minimal,
    prec_d,
    recursive_minimality_check,
    reward_from_dict,
    reward_to_dict,
    solve_d,
    vector_times,
)
from nlstop.single import minimal_optimal, snell
from nlstop.tree import NodeProcess, make_rule, stop_at, stop_at_leaves, stop_node

Y1 = NodeProcess((F(1), F(2), F(0)))


def on_path_tuples(tree, d):
    seen = set()
    for leaf in tree.leaves:
        for tup in itertools.product(tree.path_to(leaf), repeat=d):
            seen.add(tup)
    return sorted(seen)


def random_table(rng, tree, d, hi=12):
    return TableReward(tree, d, {k: F(rng.randint(0, hi), rng.randint(1, 3)) for k in on_path_tuples(tree, d)})


def random_reward(rng, tree, d):
    kind = rng.choice(["additive", "swing", "table"])
    if kind == "table":
        return random_table(rng, tree, d)
    Y = random_process(rng, tree)
    if kind == "additive":
        return Additive(tree, Y, d)
    return RefractionSwing(tree, Y, d, rng.randint(0, 2))


# freezing


def test_freeze_additive():
    tree = depth1()
    f = freeze(Additive(tree, Y1, 2), 1, 1)
    assert f.arity == 1
    assert f((1,)) == 4


def test_freeze_swing_inside_refraction_window_pays_nothing():
    tree = binary(2)
    Y = NodeProcess.constant(tree, F(1))
    f = freeze(RefractionSwing(tree, Y, 2, 2), 2, 1)
    assert f((1,)) == 0
    assert f((3,)) == 0


def test_freeze_table_projects_the_other_slot():
    tree = depth1()
    table = TableReward(tree, 2, {(0, 0): F(1), (0, 1): F(4), (0, 2): F(2), (1, 0): F(7), (2, 0): F(3), (1, 1): F(0), (2, 2): F(5)})
    first_free = freeze(table, 2, 0)
    assert [first_free((m,)) for m in (0, 1, 2)] == [1, 7, 3]
    second_free = freeze(table, 1, 0)
    assert [second_free((m,)) for m in (0, 1, 2)] == [1, 4, 2]


def test_freeze_errors():
    tree = binary(2)
    reward = Additive(tree, NodeProcess.constant(tree, F(1)), 2)
    with pytest.raises(CoordinateOutOfRange):
        freeze(reward, 3, 0)
    with pytest.raises(CoordinateOutOfRange):
        freeze(freeze(reward, 1, 0), 1, 0)
    with pytest.raises(NodeNotInSubtree):
        freeze(reward, 1, 1)((2,))


def test_reward_needs_nodes_on_one_path():
    tree = depth1()
    with pytest.raises(NodeNotInSubtree):
        Additive(tree, Y1, 2)((1, 2))
    with pytest.raises(LengthMismatch):
        Additive(tree, Y1, 2)((1,))


# solving


def test_additive_example():
    tree = depth1()
    eng = UpperPrior(tree, PRIORS)
    sol = solve_d(eng, Additive(tree, Y1, 2))
    v1 = snell(eng, Y1).value
    assert sol.v_root == F(18, 5) == 2 * v1[0]
    for u in sol.coordinate_values:
        assert all(u[n] == Y1[n] + v1[n] for n in range(3))
    assert evaluate_vector(eng, Additive(tree, Y1, 2), sol.optimal_vector) == F(18, 5)


def test_swing_example_matches_enumeration():
    tree = depth1()
    eng = UpperPrior(tree, PRIORS)
    reward = RefractionSwing(tree, Y1, 2, 1)
    sol = solve_d(eng, reward)
    best, optimal = oracle.brute_value_d(eng, reward)
    assert sol.v_root == best == F(14, 5)
    assert sol.optimal_vector in optimal
    # the two exercises never share a node
    times = vector_times(sol.optimal_vector)
    assert all(a != b for a, b in times.values())


def test_one_stop_delegates_to_snell():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    X = random_process(random.Random(4), tree)
    table = TableReward(tree, 1, {(n,): X[n] for n in range(tree.num_nodes)})
    sol = solve_d(eng, table)
    single = snell(eng, X)
    assert sol.value == single.value
    assert sol.optimal_vector == (minimal_optimal(single),)


def test_table_example_matches_enumeration():
    rng = random.Random(8)
    tree = depth1()
    eng = Linear(tree, (F(1, 3), F(2, 3)))
    reward = random_table(rng, tree, 2)
    sol = solve_d(eng, reward)
    best, optimal = oracle.brute_value_d(eng, reward)
    assert sol.v_root == best
    assert is_d_minimal(eng, reward, sol, enumerated=(best, optimal))


def test_subtree_solve_matches_full_solve():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    reward = random_table(random.Random(3), tree, 2)
    sol = solve_d(eng, reward)
    for n in range(tree.num_nodes):
        assert solve_d(eng, reward, n).v_root == sol.value[n]


def test_budget_exceeded():
    tree = binary(4)
    eng = UpperPrior(tree, PRIORS)
    reward = Additive(tree, NodeProcess.constant(tree, F(1)), 5)
    with pytest.raises(BudgetExceeded) as err:
        solve_d(eng, reward)
    assert err.value.needed == 31**5


def test_shared_cache_is_consistent_across_threads():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    reward = random_table(random.Random(6), tree, 3, hi=5)
    want = solve_d(eng, reward)
    cache = SolutionCache()
    with ThreadPoolExecutor(4) as pool:
        got = list(pool.map(lambda _: solve_d(eng, reward, cache=cache), range(8)))
    assert all(g.value == want.value and g.optimal_vector == want.optimal_vector for g in got)


def test_symmetric_rewards_share_subproblems():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    Y = random_process(random.Random(1), tree)
    table = TableReward(tree, 3, {k: sum(Y[n] for n in k) for k in on_path_tuples(tree, 3)})
    sym, asym = SolutionCache(), SolutionCache()
    a = solve_d(eng, Additive(tree, Y, 3), cache=sym)
    b = solve_d(eng, table, cache=asym)
    assert a.value == b.value
    assert len(sym) < len(asym)


# evaluating vectors


def test_evaluate_coincident_vector_additive():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    Y = random_process(random.Random(2), tree)
    tau = make_rule(tree, [1, 5, 6])
    assert evaluate_vector(eng, Additive(tree, Y, 2), (tau, tau)) == 2 * stopped_value(eng, Y, tau)


def test_evaluate_coincident_vector_swing_is_zero():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    reward = RefractionSwing(tree, NodeProcess.constant(tree, F(3)), 3, 1)
    tau = make_rule(tree, [1, 5, 6])
    assert evaluate_vector(eng, reward, (tau, tau, tau)) == 0


def test_evaluate_table_by_hand():
    tree = depth1()
    table = TableReward(tree, 2, {(0, 1): F(4), (0, 2): F(2)}, default=F(0))
    vec = (stop_at(tree, 0), stop_at_leaves(tree))
    assert evaluate_vector(Linear(tree, HALF), table, vec) == 3
    assert evaluate_vector(Linear(tree, (F(1, 4), F(3, 4))), table, vec) == F(5, 2)


def test_evaluate_vector_errors():
    tree = binary(2)
    eng = Linear(tree, HALF)
    reward = Additive(tree, NodeProcess.constant(tree, F(1)), 2)
    with pytest.raises(LengthMismatch):
        evaluate_vector(eng, reward, (stop_at(tree, 0),))
    with pytest.raises(OrderViolation):
        evaluate_vector(eng, reward, (stop_at(tree, 0), stop_at_leaves(tree)), 1)


# the order


def test_prec_d_examples():
    assert prec_d([1], [2]) == "precedes"
    assert prec_d([2], [1]) == "succeeds"
    assert prec_d((1, 2), (1, 3)) == "precedes"
    assert prec_d((1, 2), (2, 1)) == "incomparable"
    assert prec_d((0, 5), (1, 1)) == "precedes"
    assert prec_d((2, 2), (2, 2)) == "equal"
    with pytest.raises(LengthMismatch):
        prec_d((1, 2), (1,))


tuples = st.integers(1, 4).flatmap(lambda d: st.tuples(*[st.lists(st.integers(0, 3), min_size=d, max_size=d)] * 3))


@settings(max_examples=400, deadline=None)
@given(tuples)
def test_prec_d_is_a_partial_order(abc):
    a, b, c = abc
    le = lambda x, y: prec_d(x, y) in ("precedes", "equal")  # noqa: E731
    assert prec_d(a, a) == "equal"
    flipped = {"precedes": "succeeds", "succeeds": "precedes", "equal": "equal", "incomparable": "incomparable"}
    assert prec_d(b, a) == flipped[prec_d(a, b)]
    if le(a, b) and le(b, a):
        assert a == b
    if le(a, b) and le(b, c):
        assert le(a, c)


# minimality


def test_constant_reward_vector_is_minimal():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    reward = Additive(tree, NodeProcess.constant(tree, F(2)), 2)
    sol = solve_d(eng, reward)
    assert sol.optimal_vector == (stop_at(tree, 0), stop_at(tree, 0))
    assert is_d_minimal(eng, reward, sol)


def test_depth1_additive_vector_is_minimal():
    tree = depth1()
    eng = UpperPrior(tree, PRIORS)
    reward = Additive(tree, Y1, 2)
    assert is_d_minimal(eng, reward, solve_d(eng, reward))


def test_delayed_vector_is_not_minimal():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    reward = Additive(tree, NodeProcess.constant(tree, F(2)), 2)
    sol = solve_d(eng, reward)
    # still optimal (the reward is constant) but stops later on every path
    late = dataclasses.replace(sol, optimal_vector=(stop_at(tree, 0), stop_at_leaves(tree)))
    assert evaluate_vector(eng, reward, late.optimal_vector) == sol.v_root
    assert not is_d_minimal(eng, reward, late)


def test_recursive_minimality_on_examples():
    tree = depth1()
    eng = UpperPrior(tree, PRIORS)
    for reward in (Additive(tree, Y1, 2), RefractionSwing(tree, Y1, 2, 1)):
        sol = solve_d(eng, reward)
        assert recursive_minimality_check(eng, reward, sol)
        nc = check_necessary_conditions(eng, reward, sol)
        assert nc.min_equals_theta and nc.min_is_optimal and nc.coordinates_optimal


def _instance(seed, d=2, depth=None):
    rng = random.Random(seed)
    tree = random_tree(rng, depth or rng.randint(1, 2), (1, 2))
    eng = random_engine(rng, tree, rng.choice(["linear", "upper_prior"]))
    return rng, tree, eng, random_reward(rng, tree, d)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_solver_matches_enumeration_and_is_minimal(seed):
    _, tree, eng, reward = _instance(seed)
    sol = solve_d(eng, reward)
    best, optimal = oracle.brute_value_d(eng, reward)
    assert sol.v_root == best
    assert evaluate_vector(eng, reward, sol.optimal_vector) == best
    assert is_d_minimal(eng, reward, sol, enumerated=(best, optimal))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from([2, 3]))
def test_assembly_invariants(seed, d):
    _, tree, eng, reward = _instance(seed, d)
    sol = solve_d(eng, reward)
    xhat = sol.reduced_reward
    for leaf in tree.leaves:
        first = min((stop_node(r, leaf) for r in sol.optimal_vector), key=tree.time)
        assert first == stop_node(sol.theta_star, leaf)
    for s, i in sol.witness.items():
        us = [u[s] for u in sol.coordinate_values]
        assert us[i - 1] == xhat[s] == max(us)
        assert all(u < xhat[s] for u in us[: i - 1])
    nc = check_necessary_conditions(eng, reward, sol)
    assert not nc.failures
    assert recursive_minimality_check(eng, reward, sol)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_pair_coincides_with_direct_reduction(seed):
    _, tree, eng, reward = _instance(seed)
    sol = solve_d(eng, reward)
    u1, u2, xt = oracle.brute_pair_reduction(eng, reward)
    # u1 keeps the second slot pinned, so it is the value with slot 2 frozen
    for n in range(tree.num_nodes):
        assert sol.coordinate_values[1][n] == u1[n]
        assert sol.coordinate_values[0][n] == u2[n]
        assert sol.reduced_reward[n] == xt[n]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from([2, 3]))
def test_additive_separability(seed, d):
    rng = random.Random(seed)
    tree = random_tree(rng, rng.randint(1, 3), (2, 2))
    eng = random_engine(rng, tree, rng.choice(["linear", "upper_prior", "g_driver"]))
    Y = random_process(rng, tree)
    sol = solve_d(eng, Additive(tree, Y, d))
    v1 = snell(eng, Y).value
    assert all(sol.value[n] == d * v1[n] for n in range(tree.num_nodes))


def test_reward_round_trip():
    tree = binary(2)
    rng = random.Random(0)
    Y = random_process(rng, tree)
    for reward in (Additive(tree, Y, 2), RefractionSwing(tree, Y, 3, 2), random_table(rng, tree, 2)):
        data = reward_to_dict(reward)
        again = reward_from_dict(data, tree)
        assert reward_to_dict(again) == data
        assert all(again(k) == reward(k) for k in on_path_tuples(tree, reward.arity))


def test_table_reward_rejects_bad_entries():
    tree = depth1()
    with pytest.raises(LengthMismatch):
        TableReward(tree, 2, {(0,): F(1)})
    with pytest.raises(NegativeReward):
        TableReward(tree, 2, {(0, 0): F(-1)})
