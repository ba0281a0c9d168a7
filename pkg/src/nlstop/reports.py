"""Batch runs over a problem file, producing versioned JSON/CSV reports.

Every check in a report carries an anchor string from :mod:`nlstop.anchors`.
Reports are deterministic given the problem file and seed in exact mode;
only the ``timings`` block varies between runs.
"""

from __future__ import annotations

import csv
import io
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from . import anchors, oracle
from .checks import AxiomReport, CheckResult, _jsonable
from .engines import axiom_check, domination_check, upper_envelope
from .errors import BudgetExceeded, EnvelopeOverflow, SpecError
from .multi import (
    DReward,
    check_necessary_conditions,
    evaluate_vector,
    is_d_minimal,
    solve_d,
    vector_nodes,
)
from .single import (
    check_optimality,
    eps_optimality_report,
    minimal_optimal,
    snell,
    supermartingale_check,
)
from .specfile import SCHEMA_VERSION, ProblemSpec
from .tree import NodeProcess, rule_le


@dataclass
class RunReport:
    command: str
    digest: str
    mode: str
    seed: int | None = None
    results: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name, anchor) -> CheckResult:
        c = CheckResult(name, anchor)
        self.checks.append(c)
        return c

    def extend(self, rep: AxiomReport, prefix: str = ""):
        for r in rep.results:
            if prefix:
                r.name = f"{prefix}.{r.name}"
            self.checks.append(r)

    def skip(self, name, anchor, reason):
        self.skipped.append({"name": name, "anchor": anchor, "reason": reason})

    def by_anchor(self) -> dict:
        out = {}
        for c in self.checks:
            out[c.anchor] = out.get(c.anchor, True) and c.passed
        return dict(sorted(out.items()))

    def to_dict(self, timings: bool = True) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "instance_digest": self.digest,
            "mode": self.mode,
            "seed": self.seed,
            "passed": self.passed,
            "results": _jsonable(self.results),
            "anchors": self.by_anchor(),
            "checks": [c.to_dict() for c in self.checks],
            "skipped": self.skipped,
        }
        if timings:
            out["timings"] = {k: round(v, 6) for k, v in self.timings.items()}
        return out

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "anchor", "passed", "samples", "violations", "worst_violation", "witness"])
        for c in self.checks:
            d = c.to_dict()
            w.writerow([
                d["name"], d["anchor"], d["passed"], d["samples"], d["violations"],
                d["worst_violation"], json.dumps(d["witness"], sort_keys=True),
            ])
        return buf.getvalue()


@contextmanager
def _timed(report: RunReport, key: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        report.timings[key] = report.timings.get(key, 0.0) + time.perf_counter() - t0


def _new_report(command: str, spec: ProblemSpec) -> RunReport:
    return RunReport(command, spec.digest, "exact" if spec.exact else "float", spec.seed)


def _record(check: CheckResult, ok: bool, witness: dict, magnitude=0):
    check.record(ok, magnitude, witness)


def _nodes(rule):
    return list(rule.stop_nodes)


def _require_single(spec: ProblemSpec):
    if isinstance(spec.reward, DReward):
        raise SpecError("reward", f"solve-single needs a single-stop reward, got d={spec.reward.arity}")


def _require_multi(spec: ProblemSpec):
    if not isinstance(spec.reward, DReward) or spec.reward.arity < 2:
        raise SpecError("reward", "solve-multi needs a reward with d >= 2")


def _single_checks(report: RunReport, spec: ProblemSpec, sol, X: NodeProcess, prefix: str = ""):
    """Optimality certificate, lambda family and oracle comparison for one Snell solution."""
    eq = sol.eq
    S = spec.start
    name = (prefix + ".") if prefix else ""
    tau = minimal_optimal(sol, S)
    cert = check_optimality(sol, S, tau)
    wit = {"S": _nodes(S), "tau": _nodes(tau), "a": cert.a, "b": cert.b, "c": cert.c,
           "E[v(S)]": cert.E_v_S, "E[X(tau)]": cert.E_X_tau}
    _record(report.check(name + "certificate_consistent", anchors.OPTIMALITY_EQUIV), cert.consistent, wit)
    _record(report.check(name + "tau_star_optimal", anchors.TAU_STAR_OPTIMAL), cert.optimal, wit)

    eps = eps_optimality_report(sol, S, spec.lambda_grid)
    bound = report.check(name + "lambda_bound", anchors.EPS_BOUND)
    value = report.check(name + "lambda_value", anchors.EPS_VALUE)
    mono = report.check(name + "lambda_monotone", anchors.EPS_MONOTONE)
    rows = []
    for r in eps.rows:
        w = {"lambda": r.lam, "tau_lambda": _nodes(r.rule), "lambda*E[v(S)]": r.scaled_value, "E[X(tau_lambda)]": r.E_X}
        _record(bound, r.bound_holds, w, r.scaled_value - r.E_X)
        _record(value, r.value_preserved, w)
        ok = r.monotone and r.below_tau_star and r.equals_tau_star == (r.lam > eps.threshold)
        _record(mono, ok, dict(w, tau_star=_nodes(eps.tau_star), threshold=eps.threshold))
        rows.append({
            "lambda": r.lam,
            "tau_lambda": _nodes(r.rule),
            "E[X(tau_lambda)]": r.E_X,
            "lambda*E[v(S)]": r.scaled_value,
            "equals_tau_star": r.equals_tau_star,
        })

    results = {
        "v_root": sol.v_root,
        "v_S": {s: sol.value[s] for s in S.stop_nodes},
        "S": _nodes(S),
        "tau_star": _nodes(tau),
        "lambda_table": rows,
        "lambda_threshold": eps.threshold,
        "certificate": {"a": cert.a, "b": cert.b, "c": cert.c, "E[v(S)]": cert.E_v_S,
                        "E[v(tau)]": cert.E_v_tau, "E[X(tau)]": cert.E_X_tau},
    }

    try:
        count = oracle.count_rules(spec.tree, sol.root)
        if count > spec.budgets.rules:
            raise BudgetExceeded("rule enumeration", count, spec.budgets.rules)
        brute = oracle.brute_value_single(sol.engine, X, sol.root, spec.budgets.rules)
    except BudgetExceeded as exc:
        report.skip(name + "oracle_value", anchors.SNELL_VALUE, str(exc))
        report.skip(name + "tau_star_minimal", anchors.TAU_STAR_MINIMAL, str(exc))
    else:
        _record(
            report.check(name + "oracle_value", anchors.SNELL_VALUE),
            eq.eq(sol.v_root, brute.value),
            {"snell": sol.v_root, "brute": brute.value},
            abs(sol.v_root - brute.value),
        )
        root_tau = minimal_optimal(sol)
        below = [r for r in brute.argmax if not rule_le(root_tau, r)]
        _record(
            report.check(name + "tau_star_minimal", anchors.TAU_STAR_MINIMAL),
            not below,
            {"tau_star": _nodes(root_tau), "counterexample": _nodes(below[0]) if below else None},
        )
        results["oracle_value"] = brute.value
        results["oracle_rules"] = count
    return results


def run_solve_single(spec: ProblemSpec) -> RunReport:
    _require_single(spec)
    report = _new_report("solve-single", spec)
    with _timed(report, "solve"):
        sol = snell(spec.engine, spec.reward, eq=spec.eq)
    with _timed(report, "checks"):
        report.results = _single_checks(report, spec, sol, spec.reward)
    return report


def _multi_checks(report: RunReport, spec: ProblemSpec, sol):
    engine, reward = spec.engine, spec.reward
    eq = sol.snell.eq
    d = reward.arity
    vec = sol.optimal_vector
    tree = spec.tree

    got = evaluate_vector(engine, reward, vec)
    _record(
        report.check("assembled_value", anchors.MULTI_ASSEMBLY),
        eq.eq(got, sol.v_root),
        {"vector": [_nodes(r) for r in vec], "E[X(tau)]": got, "v_root": sol.v_root},
        abs(got - sol.v_root),
    )
    first = report.check("first_stop", anchors.MULTI_FIRST_STOP)
    theta = set(sol.theta_star.stop_nodes)
    for leaf, ns in vector_nodes(vec, sol.root).items():
        m = min(ns, key=tree.time)
        _record(first, m in theta and tree.is_ancestor_or_self(m, leaf),
                {"leaf": leaf, "stops": list(ns), "theta_star": sorted(theta)})
    wit = report.check("witness", anchors.MULTI_WITNESS)
    for s, i in sorted(sol.witness.items()):
        us = [sol.coordinate_values[k][s] for k in range(d)]
        _record(wit, sol.reduced_reward[s] == max(us) == us[i - 1],
                {"node": s, "coordinate": i, "u": us, "xhat": sol.reduced_reward[s]})
    nec = check_necessary_conditions(engine, reward, sol)
    _record(
        report.check("necessary_conditions", anchors.NECESSARY),
        nec.min_equals_theta and nec.min_is_optimal and nec.coordinates_optimal,
        {"failures": nec.failures},
    )
    if reward.kind == "additive":
        single = snell(engine, reward.Y, sol.root, eq)
        add = report.check("additive_separability", anchors.ADDITIVE)
        for n in tree.subtree(sol.root):
            _record(add, eq.eq(sol.value[n], d * single.value[n]),
                    {"node": n, "v_d": sol.value[n], "d*v_1": d * single.value[n]})

    results = {
        "d": d,
        "v_root": sol.v_root,
        "optimal_vector": [_nodes(r) for r in vec],
        "theta_star": _nodes(sol.theta_star),
        "witness": {s: i for s, i in sorted(sol.witness.items())},
        "xhat": {n: sol.reduced_reward[n] for n in tree.subtree(sol.root)},
    }

    if d == 2:
        results["pair_sets"] = _pair_b_check(report, sol)
    count = oracle.count_rules(tree, sol.root)
    total = count**d
    if total > spec.budgets.vectors:
        reason = str(BudgetExceeded("d-vector enumeration", total, spec.budgets.vectors))
        report.skip("oracle_value", anchors.MULTI_VALUE, reason)
        report.skip("d_minimal", anchors.MULTI_MINIMAL, reason)
    else:
        best, optimal = oracle.brute_value_d(engine, reward, sol.root, spec.budgets.vectors)
        _record(
            report.check("oracle_value", anchors.MULTI_VALUE),
            eq.eq(sol.v_root, best),
            {"solver": sol.v_root, "brute": best},
            abs(sol.v_root - best),
        )
        _record(
            report.check("d_minimal", anchors.MULTI_MINIMAL),
            is_d_minimal(engine, reward, sol, enumerated=(best, optimal)),
            {"vector": [_nodes(r) for r in vec]},
        )
        results["oracle_value"] = best
        results["oracle_optimal_vectors"] = len(optimal)
        if d == 2:
            results["pair_sets"]["strict_A_inclusions"] = _pair_a_checks(report, sol, optimal)

    if d == 2:
        if count > spec.budgets.rules:
            report.skip("pair_reduction", anchors.MULTI_PAIR, str(BudgetExceeded("rule enumeration", count, spec.budgets.rules)))
        else:
            u1, u2, xt = oracle.brute_pair_reduction(engine, reward, sol.root, spec.budgets.rules)
            pair = report.check("pair_reduction", anchors.MULTI_PAIR)
            for n in tree.subtree(sol.root):
                # slot-1-frozen value is the pair reduction's second function
                mine = (sol.coordinate_values[1][n], sol.coordinate_values[0][n], sol.reduced_reward[n])
                ok = all(eq.eq(a, b) for a, b in zip(mine, (u1[n], u2[n], xt[n])))
                _record(pair, ok, {"node": n, "solver": list(mine), "brute": [u1[n], u2[n], xt[n]]})
    return results


def _pair_u(sol):
    # u1 pins the second slot, u2 the first: u1 = u^(2), u2 = u^(1)
    return sol.coordinate_values[1], sol.coordinate_values[0]


def _pair_b_check(report: RunReport, sol) -> dict:
    """For the assembled pair, {sigma1 <= sigma2} must equal B = {u1(theta*) <= u2(theta*)} leafwise."""
    tree = sol.snell.tree
    u1, u2 = _pair_u(sol)
    first_le, in_b = [], []
    chk = report.check("pair_B_set", anchors.PAIR_B_SET)
    for leaf, (n1, n2) in vector_nodes(sol.optimal_vector, sol.root).items():
        theta = min((n1, n2), key=tree.time)
        le = tree.time(n1) <= tree.time(n2)
        b = u1[theta] <= u2[theta]
        if le:
            first_le.append(leaf)
        if b:
            in_b.append(leaf)
        _record(chk, le == b, {"leaf": leaf, "sigma": [n1, n2], "theta": theta, "u1": u1[theta], "u2": u2[theta]})
    return {"sigma1<=sigma2": first_le, "B": in_b}


def _pair_a_checks(report: RunReport, sol, optimal) -> int:
    """A = {tau1 <= tau2} lies inside {u1 <= u2} at tau1 ^ tau2 for every optimal pair.

    Returns how many optimal pairs have a strict inclusion.
    """
    tree = sol.snell.tree
    u1, u2 = _pair_u(sol)
    chk = report.check("pair_A_subset", anchors.PAIR_A_SUBSET)
    strict = 0
    for vec in optimal:
        a_set, u_set = set(), set()
        for leaf, (n1, n2) in vector_nodes(vec, sol.root).items():
            m = min((n1, n2), key=tree.time)
            if tree.time(n1) <= tree.time(n2):
                a_set.add(leaf)
            if u1[m] <= u2[m]:
                u_set.add(leaf)
        _record(chk, a_set <= u_set, {"vector": [_nodes(r) for r in vec], "A": a_set, "u1<=u2": u_set})
        strict += a_set < u_set
    return strict


def run_solve_multi(spec: ProblemSpec) -> RunReport:
    _require_multi(spec)
    report = _new_report("solve-multi", spec)
    with _timed(report, "solve"):
        sol = solve_d(spec.engine, spec.reward, budget=spec.budgets.evals, eq=spec.eq)
    with _timed(report, "checks"):
        report.results = _multi_checks(report, spec, sol)
    return report


def run_verify(spec: ProblemSpec) -> RunReport:
    """Full check suite: axioms, domination, the solver checks and the supermartingale property."""
    if spec.seed is None:
        raise SpecError("seed", "verify draws random samples and needs a seed")
    report = _new_report("verify", spec)
    engine = spec.engine
    n_ax = spec.samples["axioms"]
    with _timed(report, "axioms"):
        report.extend(axiom_check(engine, spec.tree, n_ax, spec.seed), "axioms")
        try:
            env = upper_envelope(engine)
        except EnvelopeOverflow as exc:
            report.skip("domination", anchors.DOMINATION, str(exc))
        else:
            report.extend(domination_check(engine, env, spec.tree, n_ax, spec.seed), "domination")

    with _timed(report, "solve"):
        if isinstance(spec.reward, DReward) and spec.reward.arity >= 2:
            msol = solve_d(engine, spec.reward, budget=spec.budgets.evals, eq=spec.eq)
            report.results["multi"] = _multi_checks(report, spec, msol)
            sol = msol.snell
            X = msol.reduced_reward
        else:
            X = spec.reward
            if isinstance(X, DReward):
                X = NodeProcess(tuple(X((n,)) for n in range(spec.tree.num_nodes)))
            sol = snell(engine, X, eq=spec.eq)
        report.results["single"] = _single_checks(report, spec, sol, X, "single")

    with _timed(report, "supermartingale"):
        rep = supermartingale_check(engine, sol, spec.samples["supermartingale"], spec.seed, spec.budgets.rules)
        report.extend(rep, "single")
    report.results["v_root"] = sol.v_root
    return report


def error_report(command: str, exc: Exception) -> dict:
    err = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("path", "node", "value", "budget"):
        if hasattr(exc, attr):
            err[attr] = _jsonable(getattr(exc, attr))
    return {"schema_version": SCHEMA_VERSION, "command": command, "passed": False, "error": err}
