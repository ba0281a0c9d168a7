import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import HALF, PRIORS, binary, depth1, random_engine, random_tree
from nlstop.engines import (
    GDriver,
    Linear,
    UpperPrior,
    axiom_check,
    cond_exp,
    domination_check,
    engine_from_dict,
    martingale_process,
    one_step_exp,
    stopped_value,
    upper_envelope,
)
from nlstop.errors import (
    ArityMismatch,
    MalformedEngine,
    MalformedKernel,
    MissingValues,
    NonBinomialNode,
    TimeOrderViolation,
)
from nlstop.tree import NodeProcess, make_rule, stop_at, stop_at_leaves


def test_linear_mean():
    assert one_step_exp(Linear(depth1(), HALF), 0, [2, 0]) == 1


def test_upper_prior_takes_the_max_row():
    assert one_step_exp(UpperPrior(depth1(), PRIORS), 0, [5, 0]) == F(9, 2)


@pytest.mark.parametrize("make", [
    lambda t: Linear(t, HALF),
    lambda t: UpperPrior(t, PRIORS),
    lambda t: GDriver(t, F(1, 2), F(1, 5), 1),
])
def test_constants_preserved(make):
    assert one_step_exp(make(depth1()), 0, [F(7, 3), F(7, 3)]) == F(7, 3)


def test_arity_mismatch():
    with pytest.raises(ArityMismatch):
        one_step_exp(Linear(depth1(), HALF), 0, [1, 2, 3])


def test_gdriver_needs_binary_nodes():
    tree = random_tree(random.Random(1), 1, (3, 3))
    with pytest.raises(NonBinomialNode):
        GDriver(tree, F(1, 2), F(1, 10), 1)


def test_gdriver_exact_mode_needs_rational_sqrt():
    with pytest.raises(MalformedEngine):
        GDriver(depth1(), F(1, 3), F(1, 10), 1)


def test_gdriver_float_mode_accepts_irrational_sqrt():
    g = GDriver(depth1(), 1 / 3, 0.1, 1.0)
    assert not g.exact
    assert one_step_exp(g, 0, [1.0, 1.0]) == pytest.approx(1.0)


def test_kernel_not_summing_to_one_is_rejected():
    with pytest.raises(MalformedKernel):
        Linear(depth1(), (F(1, 2), F(2, 5)))


def test_kernel_below_min_prob_is_rejected():
    with pytest.raises(MalformedKernel):
        Linear(depth1(), (F(1), F(0)))
    with pytest.raises(MalformedKernel):
        Linear(depth1(), HALF, min_prob=0)


def test_cond_exp_at_own_time_is_identity():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    xi = {n: F(n) for n in tree.layers[1]}
    assert cond_exp(eng, xi, 2, u=1) == 2


def test_cond_exp_two_level_max():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    xi = {n: F(0) for n in tree.leaves}
    xi[3] = F(1)
    assert cond_exp(eng, xi, 0) == F(81, 100)


def test_cond_exp_translation():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    xi = {3: F(1), 4: F(0), 5: F(2), 6: F(5)}
    shifted = {n: v + 3 for n, v in xi.items()}
    assert cond_exp(eng, shifted, 0) == cond_exp(eng, xi, 0) + 3


def test_cond_exp_errors():
    tree = binary(2)
    eng = Linear(tree, HALF)
    with pytest.raises(TimeOrderViolation):
        cond_exp(eng, {0: 1}, 3, u=1)
    with pytest.raises(MissingValues):
        cond_exp(eng, {3: 1, 4: 1, 5: 1}, 0)


def test_martingale_process_constant():
    tree = binary(3)
    eng = UpperPrior(tree, PRIORS)
    proc = martingale_process(eng, NodeProcess.constant(tree, F(4)))
    assert set(proc.values) == {F(4)}


def test_martingale_process_linear_is_classical():
    tree = binary(2)
    eng = Linear(tree, HALF)
    xi = {3: F(4), 4: F(0), 5: F(2), 6: F(2)}
    proc = martingale_process(eng, xi)
    assert [proc[n] for n in (0, 1, 2)] == [2, 2, 2]


def test_martingale_process_indicator_is_row_max_product():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    proc = martingale_process(eng, {3: F(1), 4: F(0), 5: F(0), 6: F(0)})
    path = [proc[n] for n in (0, 1, 3)]
    assert path == [F(81, 100), F(9, 10), F(1)]


def test_stopped_value_examples():
    tree = depth1()
    X = NodeProcess((F(1), F(2), F(0)))
    assert stopped_value(UpperPrior(tree, PRIORS), X, stop_at(tree, 0)) == 1
    assert stopped_value(UpperPrior(tree, PRIORS), X, stop_at_leaves(tree)) == F(9, 5)
    assert stopped_value(Linear(tree, HALF), X, stop_at_leaves(tree)) == 1


def test_stopped_value_from_inner_node():
    tree = binary(2)
    X = NodeProcess(tuple(F(n) for n in range(7)))
    rule = make_rule(tree, [1, 5, 6])
    assert stopped_value(Linear(tree, HALF), X, rule, 2) == F(11, 2)


@pytest.mark.parametrize("kind", ["linear", "upper_prior", "g_driver"])
def test_axioms_hold(kind):
    tree = binary(3)
    eng = random_engine(random.Random(5), tree, kind)
    rep = axiom_check(eng, tree, 60, seed=11)
    assert rep.passed, rep.to_dict()
    names = {r.name for r in rep.results}
    assert {"monotonicity", "time_consistency", "zero_one_law", "translation_invariance"} <= names
    assert {"sub_additivity", "positive_homogeneity"} <= names


def test_axiom_report_is_seeded():
    tree = binary(2)
    eng = UpperPrior(tree, PRIORS)
    assert axiom_check(eng, tree, 20, seed=3).to_dict() == axiom_check(eng, tree, 20, seed=3).to_dict()


def test_self_domination_and_singleton_envelope():
    tree = binary(3)
    up = UpperPrior(tree, PRIORS)
    assert domination_check(up, up, tree, 50, seed=1).passed
    lin = Linear(tree, HALF)
    assert domination_check(lin, up, tree, 50, seed=2).passed


def test_domination_failure_is_reported():
    tree = binary(2)
    up = UpperPrior(tree, PRIORS)
    lin = Linear(tree, HALF)
    # a linear engine does not dominate the upper one
    rep = domination_check(up, lin, tree, 80, seed=4)
    assert not rep.passed
    assert rep["domination"].witness is not None


def test_envelopes():
    tree = depth1()
    env = upper_envelope(Linear(tree, HALF))
    assert env.priors[0] == (HALF,)
    env = upper_envelope(GDriver(tree, F(1, 2), F(0), F(3)))
    assert env.priors[0] == (HALF,)
    env = upper_envelope(GDriver(tree, F(1, 2), F(1, 5), F(1)))
    assert set(env.priors[0]) == {(F(3, 5), F(2, 5)), (F(2, 5), F(3, 5))}


def test_driver_bounds_and_envelope_clipping():
    # the driver rejects kappa values that would push p outside [0, 1]
    with pytest.raises(MalformedEngine):
        GDriver(depth1(), F(1, 2), F(3), F(1))
    # clipping into [min_prob, 1 - min_prob] keeps the envelope valid at the edge
    env = upper_envelope(GDriver(depth1(), F(1, 2), F(1), F(1)))
    lo = env.min_prob
    assert set(env.priors[0]) == {(1 - lo, lo), (lo, 1 - lo)}


def test_engine_from_dict_round_trip():
    tree = binary(2)
    for eng in (Linear(tree, HALF), UpperPrior(tree, PRIORS), GDriver(tree, F(1, 2), F(1, 10), F(1))):
        again = engine_from_dict(eng.to_dict(), tree)
        assert again.to_dict() == eng.to_dict()


@settings(max_examples=200, deadline=None)
@given(
    st.fractions(min_value=-20, max_value=20, max_denominator=12),
    st.fractions(min_value=-20, max_value=20, max_denominator=12),
    st.sampled_from([F(0), F(1, 10), F(1, 5), F(1, 2)]),
)
def test_gdriver_equals_its_envelope(yu, yd, kappa):
    tree = depth1()
    g = GDriver(tree, F(1, 2), kappa, F(1))
    assert one_step_exp(g, 0, [yu, yd]) == one_step_exp(upper_envelope(g), 0, [yu, yd])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from(["linear", "upper_prior"]))
def test_one_step_monotone(seed, kind):
    rng = random.Random(seed)
    tree = random_tree(rng, 1, (2, 3))
    eng = random_engine(rng, tree, kind)
    k = len(tree.children(0))
    a = [F(rng.randint(-9, 9), rng.randint(1, 3)) for _ in range(k)]
    b = [x + F(rng.randint(0, 4), 3) for x in a]
    assert one_step_exp(eng, 0, a) <= one_step_exp(eng, 0, b)
    if a != b:
        assert one_step_exp(eng, 0, a) < one_step_exp(eng, 0, b)
