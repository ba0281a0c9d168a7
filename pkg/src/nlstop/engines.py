"""Conditional nonlinear expectations on a filtration tree.

An engine is a one-step operator per non-leaf node mapping the values at
its children to a value at the node. Conditional expectations between any
two times are compositions of one-step operators, which makes time
consistency hold by construction; the axiom checker still tests it, along
with everything else the operators are supposed to satisfy.

Three engines are provided:

* :class:`Linear`: one transition kernel per node (classical expectation).
* :class:`UpperPrior`: max over a finite set of kernels per node. The set
  is rectangular (chosen node by node), so the backward max is time
  consistent.
* :class:`GDriver`: binomial discretisation of the g-expectation with
  driver ``kappa * |z|``::

      y = p*y_u + (1-p)*y_d + kappa*|z|*dt,  z = (y_u - y_d)*sqrt(p(1-p)/dt)

  With this scaling of ``z`` it coincides with the two-kernel upper
  expectation whose up-probabilities are ``p +- kappa*sqrt(p(1-p)dt)``
  (see :func:`upper_envelope`).
"""

from __future__ import annotations

import math
import random
from fractions import Fraction
from typing import Mapping, Sequence

from . import anchors
from .checks import AxiomReport
from .errors import (
    ArityMismatch,
    EnvelopeOverflow,
    MalformedEngine,
    MalformedKernel,
    MissingValues,
    NodeNotInSubtree,
    NonBinomialNode,
    OrderViolation,
    TimeOrderViolation,
    TreeMismatch,
)
from .numeric import EqMode, is_exact, parse_number, sqrt_exact
from .tree import FiltrationTree, NodeProcess, StoppingRule

DEFAULT_MIN_PROB = Fraction(1, 10**6)
FLOAT_SUM_TOL = 1e-12


def _per_node(tree: FiltrationTree, spec, what: str) -> list:
    """Expand a uniform value or a ``{node: value}`` map over non-leaf nodes."""
    out = [None] * tree.num_nodes
    if isinstance(spec, Mapping):
        for k, v in spec.items():
            out[int(k)] = v
        missing = [n for n in range(tree.num_nodes) if not tree.is_leaf(n) and out[n] is None]
        if missing:
            raise MalformedKernel(f"{what} missing at nodes {missing[:10]}")
    else:
        for n in range(tree.num_nodes):
            if not tree.is_leaf(n):
                out[n] = spec
    return out


class ExpectationEngine:
    kind = "abstract"
    sublinear = True

    def __init__(self, tree: FiltrationTree, min_prob):
        self.tree = tree
        self.min_prob = min_prob
        if not min_prob > 0:
            raise MalformedKernel("min_prob must be > 0")

    @property
    def exact(self) -> bool:
        raise NotImplementedError

    @property
    def eq_mode(self) -> EqMode:
        return EqMode(self.exact)

    def one_step(self, node: int, child_values: Sequence):
        kids = self.tree.children(node)
        if not kids:
            raise ArityMismatch(f"node {node} is a leaf; no one-step expectation")
        if len(child_values) != len(kids):
            raise ArityMismatch(
                f"node {node} has {len(kids)} children, got {len(child_values)} values"
            )
        return self._step(node, child_values)

    def _step(self, node, vals):
        raise NotImplementedError

    def _check_row(self, node, row):
        kids = self.tree.children(node)
        if len(row) != len(kids):
            raise MalformedKernel(
                f"kernel at node {node} has {len(row)} entries for {len(kids)} children"
            )
        total = sum(row)
        if is_exact(total):
            if total != 1:
                raise MalformedKernel(f"kernel at node {node} sums to {total}")
        elif abs(total - 1) > FLOAT_SUM_TOL:
            raise MalformedKernel(f"kernel at node {node} sums to {total!r}")
        low = min(row)
        if low < self.min_prob:
            raise MalformedKernel(
                f"kernel at node {node} has entry {low} below min_prob {self.min_prob}"
            )

    def to_dict(self) -> dict:
        raise NotImplementedError


class Linear(ExpectationEngine):
    kind = "linear"

    def __init__(self, tree, kernel, min_prob=DEFAULT_MIN_PROB):
        super().__init__(tree, min_prob)
        self.kernel = tuple(None if r is None else tuple(r) for r in _per_node(tree, kernel, "kernel"))
        for n, row in enumerate(self.kernel):
            if row is not None:
                self._check_row(n, row)

    @property
    def exact(self):
        return all(is_exact(p) for row in self.kernel if row for p in row)

    def _step(self, node, vals):
        acc = 0
        for p, v in zip(self.kernel[node], vals):
            acc = acc + p * v
        return acc

    def to_dict(self):
        return {
            "kind": self.kind,
            "kernels": {str(n): [str(p) for p in row] for n, row in enumerate(self.kernel) if row},
            "min_prob": str(self.min_prob),
        }


class UpperPrior(ExpectationEngine):
    kind = "upper_prior"

    def __init__(self, tree, priors, min_prob=DEFAULT_MIN_PROB):
        super().__init__(tree, min_prob)
        rows = _per_node(tree, priors, "prior set")
        self.priors = tuple(None if rs is None else tuple(tuple(r) for r in rs) for rs in rows)
        for n, rs in enumerate(self.priors):
            if rs is None:
                continue
            if not rs:
                raise MalformedKernel(f"empty prior set at node {n}")
            for row in rs:
                self._check_row(n, row)

    @property
    def exact(self):
        return all(is_exact(p) for rs in self.priors if rs for row in rs for p in row)

    def _step(self, node, vals):
        best = None
        for row in self.priors[node]:
            acc = 0
            for p, v in zip(row, vals):
                acc = acc + p * v
            if best is None or acc > best:
                best = acc
        return best

    def to_dict(self):
        return {
            "kind": self.kind,
            "priors": {
                str(n): [[str(p) for p in row] for row in rs]
                for n, rs in enumerate(self.priors)
                if rs
            },
            "min_prob": str(self.min_prob),
        }


class GDriver(ExpectationEngine):
    """Binomial g-expectation with driver ``kappa*|z|``; binary trees only."""

    kind = "g_driver"

    def __init__(self, tree, p, kappa, dt, min_prob=DEFAULT_MIN_PROB):
        super().__init__(tree, min_prob)
        if kappa < 0:
            raise MalformedEngine("kappa must be >= 0")
        if not dt > 0:
            raise MalformedEngine("dt must be > 0")
        self.kappa = kappa
        self.dt = dt
        self.p = tuple(_per_node(tree, p, "p"))
        self._exact = is_exact(kappa) and is_exact(dt) and all(
            is_exact(q) for q in self.p if q is not None
        )
        zscale = [None] * tree.num_nodes
        for n, q in enumerate(self.p):
            if q is None:
                continue
            if len(tree.children(n)) != 2:
                raise NonBinomialNode(f"node {n} has {len(tree.children(n))} children")
            if not (min_prob <= q <= 1 - min_prob):
                raise MalformedKernel(f"p={q} at node {n} outside [min_prob, 1-min_prob]")
            if kappa == 0:
                # no ambiguity: the driver vanishes whatever the scale
                z = 0 * q
            elif self._exact:
                z = sqrt_exact(q * (1 - q) / dt)
                if z is None:
                    raise MalformedEngine(
                        f"sqrt(p(1-p)/dt) is irrational at node {n}; use float mode"
                    )
            else:
                z = math.sqrt(q * (1 - q) / dt)
            zscale[n] = z
            shift = kappa * z * dt
            if q - shift < 0 or q + shift > 1:
                raise MalformedEngine(
                    f"kappa too large at node {n}: p +- {shift} leaves [0, 1], driver not monotone"
                )
        self.zscale = tuple(zscale)

    @property
    def exact(self):
        return self._exact

    def shift(self, node):
        """Probability shift ``kappa*sqrt(p(1-p)dt)`` of the equivalent prior set."""
        return self.kappa * self.zscale[node] * self.dt

    def _step(self, node, vals):
        yu, yd = vals
        q = self.p[node]
        z = (yu - yd) * self.zscale[node]
        return q * yu + (1 - q) * yd + self.kappa * abs(z) * self.dt

    def to_dict(self):
        ps = {q for q in self.p if q is not None}
        p = str(ps.pop()) if len(ps) == 1 else {str(n): str(q) for n, q in enumerate(self.p) if q is not None}
        return {
            "kind": self.kind,
            "p": p,
            "kappa": str(self.kappa),
            "dt": str(self.dt),
            "min_prob": str(self.min_prob),
        }


def one_step_exp(engine: ExpectationEngine, node: int, child_values: Sequence):
    return engine.one_step(node, child_values)


def pull_back(engine: ExpectationEngine, at: int, cut: Mapping):
    """Value at ``at`` of the backward composition stopped on ``cut``.

    ``cut`` maps nodes to values and must meet every path below ``at``;
    the recursion stops at the first node of each path found in ``cut``.
    """
    tree = engine.tree

    def go(n):
        v = cut.get(n)
        if v is not None:
            return v
        kids = tree.children(n)
        if not kids:
            raise MissingValues(f"no value on the path through leaf {n}")
        return engine.one_step(n, [go(c) for c in kids])

    return go(at)


def _lookup(rv, n):
    try:
        return rv[n]
    except (KeyError, IndexError):
        return None


def cond_exp(engine: ExpectationEngine, rv, at: int, u: int | None = None):
    """E_{t(at)}[xi] at the atom ``at`` for a time-``u`` random variable ``xi``.

    ``rv`` is a :class:`NodeProcess` or ``{node: value}`` holding values on
    the time-``u`` nodes below ``at`` (``u`` defaults to the horizon).
    """
    tree = engine.tree
    u = tree.num_steps if u is None else u
    if tree.time(at) > u:
        raise TimeOrderViolation(f"node {at} is at t={tree.time(at)} > u={u}")
    cut = {}
    for n in tree.subtree(at):
        if tree.time(n) == u:
            v = _lookup(rv, n)
            if v is None:
                raise MissingValues(f"random variable undefined at node {n}")
            cut[n] = v
    return pull_back(engine, at, cut)


def martingale_process(engine: ExpectationEngine, rv, u: int | None = None) -> NodeProcess:
    """The process t -> E_t[xi] for t <= u; nodes after ``u`` are left unset."""
    tree = engine.tree
    u = tree.num_steps if u is None else u
    vals = [None] * tree.num_nodes
    for n in tree.layers[u]:
        v = _lookup(rv, n)
        if v is None:
            raise MissingValues(f"random variable undefined at node {n}")
        vals[n] = v
    for t in range(u - 1, -1, -1):
        for n in tree.layers[t]:
            vals[n] = engine.one_step(n, [vals[c] for c in tree.children(n)])
    return NodeProcess(tuple(vals))


def _check_rule_from(rule: StoppingRule, frm: int):
    tree = rule.tree
    if not tree.is_ancestor_or_self(rule.root, frm):
        raise NodeNotInSubtree(f"node {frm} is outside the rule's subtree (root {rule.root})")
    rule._require_canonical()
    for n in tree.path_to(frm)[:-1]:
        if tree.is_ancestor_or_self(rule.root, n) and n in rule.flagged:
            raise OrderViolation(f"rule stops at node {n}, before node {frm}")


def stopped_cut(rule: StoppingRule, frm: int, values) -> dict:
    """``{stop node: values[stop node]}`` for the stop nodes below ``frm``."""
    _check_rule_from(rule, frm)
    tree = rule.tree
    out = {}
    for s in rule.stop_nodes:
        if tree.is_ancestor_or_self(frm, s):
            v = values[s]
            if v is None:
                raise MissingValues(f"value undefined at stop node {s}")
            out[s] = v
    return out


def stopped_value(engine: ExpectationEngine, reward, rule: StoppingRule, frm: int | None = None):
    """E_{t(frm)}[X(tau)] at the atom ``frm`` for the stopping rule ``tau``."""
    frm = rule.root if frm is None else frm
    return pull_back(engine, frm, stopped_cut(rule, frm, reward))


# -- executable axiom checks -------------------------------------------------


def _layer_cond(engine, rv: dict, u: int, t: int) -> dict:
    """E_t of a time-u random variable, as ``{time-t node: value}``."""
    tree = engine.tree
    vals = dict(rv)
    for tt in range(u - 1, t - 1, -1):
        for n in tree.layers[tt]:
            vals[n] = engine.one_step(n, [vals[c] for c in tree.children(n)])
    return {n: vals[n] for n in tree.layers[t]}


def _ancestor_at(tree, n, t):
    while tree.time(n) > t:
        n = tree.parent(n)
    return n


def _sampler(exact: bool, rng: random.Random):
    if exact:
        return lambda hi=20: Fraction(rng.randint(0, hi * 4), rng.randint(1, 4))
    return lambda hi=20: rng.uniform(0, hi)


def _gap(a, b):
    return abs(a - b)


def axiom_check(engine: ExpectationEngine, tree: FiltrationTree, num_samples: int, seed) -> AxiomReport:
    """Sample random nonnegative variables and test the expectation axioms.

    Each sample draws times ``s <= t <= u``, time-``u`` variables ``xi``
    and ``eta`` and an event ``A`` in F_t, then checks monotonicity (and its
    strict form at time 0), time consistency, the zero-one law, translation
    invariance, the local property, constant preservation and, for sublinear
    engines, sub-additivity and positive homogeneity.
    """
    if tree != engine.tree:
        raise TreeMismatch("engine is defined on a different tree")
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    rng = random.Random(seed)
    draw = _sampler(engine.exact, rng)
    eqm = engine.eq_mode
    N = tree.num_steps
    rep = AxiomReport()
    mono = rep.add("monotonicity", anchors.MONOTONICITY)
    strict = rep.add("strict_monotonicity", anchors.STRICT_MONOTONICITY)
    timec = rep.add("time_consistency", anchors.TIME_CONSISTENCY)
    zero_one = rep.add("zero_one_law", anchors.ZERO_ONE)
    transl = rep.add("translation_invariance", anchors.TRANSLATION)
    local = rep.add("local_property", anchors.LOCAL)
    const = rep.add("constant_preserving", anchors.CONSTANT_PRESERVING)
    if engine.sublinear:
        subadd = rep.add("sub_additivity", anchors.SUB_ADDITIVITY)
        homog = rep.add("positive_homogeneity", anchors.HOMOGENEITY)

    def measurable_at(t, u):
        # random F_t-measurable variable lifted to the time-u nodes
        base = {n: draw() for n in tree.layers[t]}
        return base, {m: base[_ancestor_at(tree, m, t)] for m in tree.layers[u]}

    for _ in range(num_samples):
        u = rng.randint(0, N)
        t = rng.randint(0, u)
        s = rng.randint(0, t)
        layer_u = tree.layers[u]
        xi = {m: draw() for m in layer_u}
        bump = {m: (draw(3) if rng.random() < 0.5 else 0) for m in layer_u}
        eta = {m: xi[m] + bump[m] for m in layer_u}
        A = {n for n in tree.layers[t] if rng.random() < 0.5}
        in_A = {m: _ancestor_at(tree, m, t) in A for m in layer_u}

        e_xi = _layer_cond(engine, xi, u, t)
        e_eta = _layer_cond(engine, eta, u, t)
        for n in tree.layers[t]:
            mono.record(
                eqm.le(e_xi[n], e_eta[n]),
                e_xi[n] - e_eta[n],
                {"t": t, "u": u, "node": n, "E[xi]": e_xi[n], "E[eta]": e_eta[n]},
            )
        # strict form: at time 0 a nonzero nonnegative bump must show up
        if any(bump.values()):
            r0 = tree.root
            a0 = _layer_cond(engine, xi, u, 0)[r0]
            b0 = _layer_cond(engine, eta, u, 0)[r0]
            strict.record(eqm.lt(a0, b0), a0 - b0, {"u": u, "E0[xi]": a0, "E0[eta]": b0})
        else:
            strict.record(True)

        direct = _layer_cond(engine, xi, u, s)
        composed = _layer_cond(engine, e_xi, t, s)
        for n in tree.layers[s]:
            timec.record(
                eqm.eq(direct[n], composed[n]),
                _gap(direct[n], composed[n]),
                {"s": s, "t": t, "u": u, "node": n, "direct": direct[n], "composed": composed[n]},
            )

        xi_a = {m: (xi[m] if in_A[m] else 0) for m in layer_u}
        e_xi_a = _layer_cond(engine, xi_a, u, t)
        for n in tree.layers[t]:
            want = e_xi[n] if n in A else 0
            zero_one.record(
                eqm.eq(e_xi_a[n], want),
                _gap(e_xi_a[n], want),
                {"t": t, "u": u, "node": n, "lhs": e_xi_a[n], "rhs": want},
            )

        eta_t, eta_lift = measurable_at(t, u)
        shifted = {m: xi[m] + eta_lift[m] for m in layer_u}
        e_shift = _layer_cond(engine, shifted, u, t)
        for n in tree.layers[t]:
            want = e_xi[n] + eta_t[n]
            transl.record(
                eqm.eq(e_shift[n], want),
                _gap(e_shift[n], want),
                {"t": t, "u": u, "node": n, "lhs": e_shift[n], "rhs": want},
            )

        mixed = {m: (xi[m] if in_A[m] else eta[m]) for m in layer_u}
        e_mixed = _layer_cond(engine, mixed, u, t)
        for n in tree.layers[t]:
            want = e_xi[n] if n in A else e_eta[n]
            local.record(
                eqm.eq(e_mixed[n], want),
                _gap(e_mixed[n], want),
                {"t": t, "u": u, "node": n, "lhs": e_mixed[n], "rhs": want},
            )

        c_t, c_lift = measurable_at(t, u)
        e_c = _layer_cond(engine, c_lift, u, t)
        for n in tree.layers[t]:
            const.record(
                eqm.eq(e_c[n], c_t[n]),
                _gap(e_c[n], c_t[n]),
                {"t": t, "u": u, "node": n, "lhs": e_c[n], "rhs": c_t[n]},
            )

        if engine.sublinear:
            other = {m: draw() for m in layer_u}
            total = {m: xi[m] + other[m] for m in layer_u}
            e_total = _layer_cond(engine, total, u, t)
            e_other = _layer_cond(engine, other, u, t)
            for n in tree.layers[t]:
                rhs = e_xi[n] + e_other[n]
                subadd.record(
                    eqm.le(e_total[n], rhs),
                    e_total[n] - rhs,
                    {"t": t, "u": u, "node": n, "E[xi+eta]": e_total[n], "E[xi]+E[eta]": rhs},
                )
            lam = draw(5)
            scaled = {m: lam * xi[m] for m in layer_u}
            e_scaled = _layer_cond(engine, scaled, u, t)
            for n in tree.layers[t]:
                want = lam * e_xi[n]
                homog.record(
                    eqm.eq(e_scaled[n], want),
                    _gap(e_scaled[n], want),
                    {"t": t, "u": u, "node": n, "lambda": lam, "lhs": e_scaled[n], "rhs": want},
                )
    return rep


def domination_check(
    engine: ExpectationEngine,
    envelope: ExpectationEngine,
    tree: FiltrationTree,
    num_samples: int,
    seed,
) -> AxiomReport:
    """Check that ``envelope`` dominates ``engine`` on sampled inputs.

    Tests both ``E_t[xi+eta] - E_t[eta] <= Env_t[xi]`` and its consequence
    ``|E_t[xi] - E_t[eta]| <= Env_t[|xi-eta|]`` at every time-t atom.
    """
    if engine.tree != tree or envelope.tree != tree:
        raise TreeMismatch("engines must share the tree")
    rng = random.Random(seed)
    exact = engine.exact and envelope.exact
    draw = _sampler(exact, rng)
    eqm = EqMode(exact)
    rep = AxiomReport()
    dom = rep.add("domination", anchors.DOMINATION)
    lip = rep.add("domination_abs", anchors.DOMINATION_ABS)
    N = tree.num_steps
    for _ in range(num_samples):
        t = rng.randint(0, N)
        layer = tree.layers[N]
        xi = {m: draw() for m in layer}
        if rng.random() < 0.1:
            eta = dict(xi)
        else:
            eta = {m: draw() for m in layer}
        s = {m: xi[m] + eta[m] for m in layer}
        d = {m: abs(xi[m] - eta[m]) for m in layer}
        e_s = _layer_cond(engine, s, N, t)
        e_xi = _layer_cond(engine, xi, N, t)
        e_eta = _layer_cond(engine, eta, N, t)
        env_xi = _layer_cond(envelope, xi, N, t)
        env_d = _layer_cond(envelope, d, N, t)
        for n in tree.layers[t]:
            lhs = e_s[n] - e_eta[n]
            dom.record(
                eqm.le(lhs, env_xi[n]),
                lhs - env_xi[n],
                {"t": t, "node": n, "lhs": lhs, "rhs": env_xi[n]},
            )
            gap = abs(e_xi[n] - e_eta[n])
            lip.record(
                eqm.le(gap, env_d[n]),
                gap - env_d[n],
                {"t": t, "node": n, "lhs": gap, "rhs": env_d[n]},
            )
    return rep


def upper_envelope(engine: ExpectationEngine) -> UpperPrior:
    """Sublinear engine dominating ``engine``.

    Linear(k) gives the singleton prior set {k}, an upper-prior engine is
    its own envelope, and GDriver gives the two kernels with up-probability
    ``p +- kappa*sqrt(p(1-p)dt)``, clipped into ``[min_prob, 1-min_prob]``.
    """
    tree = engine.tree
    if isinstance(engine, UpperPrior):
        return engine
    if isinstance(engine, Linear):
        priors = {n: [row] for n, row in enumerate(engine.kernel) if row is not None}
        return UpperPrior(tree, priors, engine.min_prob)
    if isinstance(engine, GDriver):
        lo, hi = engine.min_prob, 1 - engine.min_prob
        priors = {}
        for n, q in enumerate(engine.p):
            if q is None:
                continue
            s = engine.shift(n)
            rows = []
            for up in (q + s, q - s):
                if up < 0 or up > 1:
                    raise EnvelopeOverflow(f"up-probability {up} at node {n} outside [0, 1]")
                up = min(max(up, lo), hi)
                row = (up, 1 - up)
                if row not in rows:
                    rows.append(row)
            priors[n] = rows
        return UpperPrior(tree, priors, engine.min_prob)
    raise MalformedEngine(f"no envelope for engine kind {engine.kind!r}")


def engine_from_dict(data: Mapping, tree: FiltrationTree, exact: bool = True) -> ExpectationEngine:
    """Parse the engine section of a problem file."""
    kind = data.get("kind")
    num = lambda x: parse_number(x, exact)  # noqa: E731
    min_prob = num(data.get("min_prob", DEFAULT_MIN_PROB if exact else 1e-6))

    def rows(x):
        return [num(p) for p in x]

    if kind == "linear":
        k = data.get("kernels", data.get("kernel"))
        if k is None:
            raise MalformedEngine("linear engine needs kernels")
        spec = {n: rows(r) for n, r in k.items()} if isinstance(k, Mapping) else rows(k)
        return Linear(tree, spec, min_prob)
    if kind == "upper_prior":
        pr = data.get("priors")
        if pr is None:
            raise MalformedEngine("upper_prior engine needs priors")
        if isinstance(pr, Mapping):
            spec = {n: [rows(r) for r in rs] for n, rs in pr.items()}
        else:
            spec = [rows(r) for r in pr]
        return UpperPrior(tree, spec, min_prob)
    if kind == "g_driver":
        p = data.get("p")
        if p is None or "kappa" not in data or "dt" not in data:
            raise MalformedEngine("g_driver engine needs p, kappa, dt")
        p = {n: num(q) for n, q in p.items()} if isinstance(p, Mapping) else num(p)
        return GDriver(tree, p, num(data["kappa"]), num(data["dt"]), min_prob)
    raise MalformedEngine(f"unknown engine kind {kind!r}")
