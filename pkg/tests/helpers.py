"""Shared fixtures-by-function for the test modules."""

import random
from fractions import Fraction as F

from nlstop.engines import GDriver, Linear, UpperPrior
from nlstop.tree import NodeProcess, build_tree

HALF = (F(1, 2), F(1, 2))
PRIORS = [HALF, (F(9, 10), F(1, 10))]


def explicit_tree(children: dict, num_steps: int):
    """Tree from ``{node: [children]}`` with node 0 as the root."""
    parent = {c: p for p, cs in children.items() for c in cs}
    t = {0: 0}
    for n in sorted(parent):
        t[n] = t[parent[n]] + 1
    nodes = [
        {"id": n, "t": t[n], "parent": parent.get(n), "children": list(children.get(n, []))}
        for n in sorted(t)
    ]
    return build_tree({"num_steps": num_steps, "nodes": nodes})


def depth1():
    return explicit_tree({0: [1, 2]}, 1)


def binary(depth):
    kids = {}
    n_internal = 2**depth - 1
    for n in range(n_internal):
        kids[n] = [2 * n + 1, 2 * n + 2]
    return explicit_tree(kids, depth)


def random_tree(rng: random.Random, depth: int, branching=(1, 3)):
    kids = {}
    frontier = [0]
    nxt_id = 1
    for _ in range(depth):
        nxt = []
        for p in frontier:
            k = rng.randint(*branching)
            kids[p] = list(range(nxt_id, nxt_id + k))
            nxt_id += k
            nxt.extend(kids[p])
        frontier = nxt
    return explicit_tree(kids, depth)


def rand_row(rng, k):
    w = [rng.randint(1, 6) for _ in range(k)]
    return tuple(F(x, sum(w)) for x in w)


def random_engine(rng, tree, kind):
    if kind == "linear":
        return Linear(tree, {n: rand_row(rng, len(tree.children(n))) for n in range(tree.num_nodes) if tree.children(n)})
    if kind == "upper_prior":
        priors = {}
        for n in range(tree.num_nodes):
            k = len(tree.children(n))
            if k:
                priors[n] = [rand_row(rng, k) for _ in range(rng.randint(2, 4))]
        return UpperPrior(tree, priors)
    if kind == "g_driver":
        return GDriver(tree, F(1, 2), rng.choice([F(0), F(1, 10), F(1, 5)]), F(1))
    raise ValueError(kind)


def random_process(rng, tree, hi=24):
    return NodeProcess(tuple(F(rng.randint(0, hi), rng.randint(1, 4)) for _ in range(tree.num_nodes)))
