"""Problem files: parsing, validation and seeded generation.

A problem file is one JSON object::

    {
      "schema_version": 1,
      "tree":   {"num_steps": 1, "nodes": [{"id": 0, "t": 0, "parent": null}, ...]}
                | {"lattice": {"N": 3, "s0": 100, "u": "11/10", "d": "9/10"}},
      "engine": {"kind": "linear" | "upper_prior" | "g_driver", ...},
      "reward": {"kind": "process", "values": [...]}
                | {"kind": "payoff", "type": "put" | "call", "strike": 100}
                | {"kind": "additive" | "refraction_swing" | "table", "d": 2, ...},
      "mode": "exact" | "float", "tolerance": 1e-9,
      "seed": 7,
      "budgets": {"nodes": 1000000, "rules": 10000, "vectors": 100000, "evals": 2000000},
      "lambda_grid": ["1/2", "9/10", "99/100", "999/1000"],
      "from": {"root": 0, "flagged": [0]},
      "samples": {"axioms": 200, "supermartingale": 100}
    }

Numbers may be JSON numbers or ``"p/q"`` strings. Every validation error is
raised as :class:`SpecError` naming the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .engines import ExpectationEngine, engine_from_dict
from .errors import HorizonTooLarge, NegativeReward, NlstopError, SpecError
from .multi import DEFAULT_EVAL_BUDGET, DReward, reward_from_dict
from .numeric import DEFAULT_FLOAT_TOL, EqMode, parse_number
from .oracle import DEFAULT_RULE_BUDGET, DEFAULT_VECTOR_BUDGET
from .tree import (
    DEFAULT_NODE_BUDGET,
    FiltrationTree,
    LatticeSpec,
    NodeProcess,
    StoppingRule,
    build_binomial,
    build_tree,
    stop_at,
)

SCHEMA_VERSION = 1
DEFAULT_LAMBDA_GRID = ("1/2", "9/10", "99/100", "999/1000")
DEFAULT_SAMPLES = {"axioms": 200, "supermartingale": 100}
MULTI_KINDS = ("additive", "refraction_swing", "table")


@dataclass(frozen=True)
class Budgets:
    nodes: int = DEFAULT_NODE_BUDGET
    rules: int = DEFAULT_RULE_BUDGET
    vectors: int = DEFAULT_VECTOR_BUDGET
    evals: int = DEFAULT_EVAL_BUDGET


@dataclass
class ProblemSpec:
    raw: dict
    tree: FiltrationTree
    engine: ExpectationEngine
    reward: object  # NodeProcess for single problems, DReward for multi
    eq: EqMode
    seed: int | None
    budgets: Budgets
    lambda_grid: list
    start: StoppingRule
    samples: dict = field(default_factory=lambda: dict(DEFAULT_SAMPLES))
    prices: NodeProcess | None = None

    @property
    def exact(self) -> bool:
        return self.eq.exact

    @property
    def arity(self) -> int:
        return self.reward.arity if isinstance(self.reward, DReward) else 1

    @property
    def digest(self) -> str:
        return instance_digest(self.raw)

    def to_json(self) -> str:
        return dump_json(self.raw)


def dump_json(data) -> str:
    return json.dumps(data, indent=2) + "\n"


def instance_digest(raw: Mapping) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode()).hexdigest()


def load_json(path: str, what: str = "spec"):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise SpecError(what, f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SpecError(what, f"{path} is not valid JSON: {exc}") from None


def apply_overrides(raw: Mapping, *, tree=None, engine=None, reward=None, mode=None,
                    tolerance=None, seed=None, lambda_grid=None, d=None) -> dict:
    """Copy of ``raw`` with command-line overrides applied (None leaves a field alone)."""
    out = copy.deepcopy(dict(raw))
    for key, val in (("tree", tree), ("engine", engine), ("reward", reward)):
        if val is not None:
            out[key] = val
    if mode is not None:
        out["mode"] = mode
    if tolerance is not None:
        out["tolerance"] = tolerance
    if seed is not None:
        out["seed"] = seed
    if lambda_grid is not None:
        out["lambda_grid"] = list(lambda_grid)
    if d is not None:
        if not isinstance(out.get("reward"), Mapping):
            raise SpecError("reward", "missing section")
        out["reward"] = dict(out["reward"], d=d)
    return out


def _section(raw, key):
    val = raw.get(key)
    if val is None:
        raise SpecError(key, "missing section")
    if not isinstance(val, Mapping):
        raise SpecError(key, "must be an object")
    return val


def _parse_mode(raw):
    mode = raw.get("mode", "exact")
    if mode == "exact":
        return EqMode(True)
    if mode != "float":
        raise SpecError("mode", f"expected 'exact' or 'float', got {mode!r}")
    tol = raw.get("tolerance", DEFAULT_FLOAT_TOL)
    try:
        tol = float(tol)
    except (TypeError, ValueError):
        raise SpecError("tolerance", f"not a number: {tol!r}") from None
    if not tol > 0:
        raise SpecError("tolerance", "float mode needs a tolerance > 0")
    return EqMode(False, tol)


def _parse_budgets(raw):
    data = raw.get("budgets") or {}
    if not isinstance(data, Mapping):
        raise SpecError("budgets", "must be an object")
    known = Budgets.__dataclass_fields__
    kw = {}
    for k, v in data.items():
        if k not in known:
            raise SpecError(f"budgets.{k}", "unknown budget")
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise SpecError(f"budgets.{k}", "must be a positive integer")
        kw[k] = v
    return Budgets(**kw)


def _parse_tree(raw, exact, budgets):
    sec = _section(raw, "tree")
    try:
        if "lattice" in sec:
            lat = sec["lattice"]
            num = lambda x: parse_number(x, exact)  # noqa: E731
            spec = LatticeSpec(int(lat["N"]), num(lat["s0"]), num(lat["u"]), num(lat["d"]))
            tree, prices = build_binomial(spec, budgets.nodes)
            return tree, prices
        tree = build_tree(sec)
    except HorizonTooLarge:
        raise
    except (NlstopError, KeyError, TypeError, ValueError) as exc:
        raise SpecError("tree", str(exc)) from None
    if tree.num_nodes > budgets.nodes:
        raise HorizonTooLarge(f"tree has {tree.num_nodes} nodes, budget {budgets.nodes}")
    return tree, None


def _parse_engine(raw, tree, exact):
    sec = _section(raw, "engine")
    try:
        return engine_from_dict(sec, tree, exact)
    except (NlstopError, KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise SpecError("engine", str(exc)) from None


def _parse_reward(raw, tree, exact, prices):
    sec = _section(raw, "reward")
    kind = sec.get("kind")
    num = lambda x: parse_number(x, exact)  # noqa: E731
    try:
        if kind == "process":
            vals = sec.get("values")
            if vals is None:
                raise SpecError("reward.values", "missing")
            if isinstance(vals, Mapping):
                vals = {int(k): num(v) for k, v in vals.items()}
            else:
                vals = [num(v) for v in vals]
            proc = NodeProcess.from_values(tree, vals)
            proc.require_total(range(tree.num_nodes))
        elif kind == "payoff":
            if prices is None:
                raise SpecError("reward", "payoff rewards need a lattice tree")
            K = num(sec["strike"])
            sign = {"put": -1, "call": 1}.get(sec.get("type"))
            if sign is None:
                raise SpecError("reward.type", "expected 'put' or 'call'")
            zero = prices[0] - prices[0]
            proc = NodeProcess(tuple(max(sign * (s - K), zero) for s in prices.values))
        elif kind in MULTI_KINDS:
            rew = reward_from_dict(sec, tree, exact)
            if rew.arity < 1:
                raise SpecError("reward.d", "must be >= 1")
            return rew
        else:
            raise SpecError("reward.kind", f"unknown reward kind {kind!r}")
    except (SpecError, NegativeReward):
        raise
    except (NlstopError, KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        raise SpecError("reward", str(exc)) from None
    # negative entries are reported with their node, not as a generic spec error
    proc.check_nonnegative()
    return proc


def _parse_start(raw, tree):
    sec = raw.get("from")
    if sec is None:
        return stop_at(tree, tree.root)
    try:
        if isinstance(sec, int):
            return stop_at(tree, sec)
        if isinstance(sec, list):
            sec = {"flagged": sec}
        root = int(sec.get("root", tree.root))
        rule = StoppingRule(tree, frozenset(int(n) for n in sec["flagged"]), root)
        if not rule.is_canonical:
            raise SpecError("from", "stopping rule is not canonical (one flag per path)")
        return rule
    except SpecError:
        raise
    except (NlstopError, KeyError, TypeError, ValueError, IndexError) as exc:
        raise SpecError("from", str(exc)) from None


def _parse_grid(raw, eq):
    grid = raw.get("lambda_grid", list(DEFAULT_LAMBDA_GRID))
    if not isinstance(grid, list) or not grid:
        raise SpecError("lambda_grid", "must be a non-empty list")
    try:
        lams = [parse_number(x, eq.exact) for x in grid]
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise SpecError("lambda_grid", str(exc)) from None
    if any(not 0 < x < 1 for x in lams):
        raise SpecError("lambda_grid", "every lambda must lie in (0, 1)")
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise SpecError("lambda_grid", "must be strictly increasing")
    return lams


def parse_spec(raw: Mapping) -> ProblemSpec:
    if not isinstance(raw, Mapping):
        raise SpecError("spec", "top level must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SpecError("schema_version", f"unsupported version {version!r}")
    eq = _parse_mode(raw)
    budgets = _parse_budgets(raw)
    tree, prices = _parse_tree(raw, eq.exact, budgets)
    engine = _parse_engine(raw, tree, eq.exact)
    reward = _parse_reward(raw, tree, eq.exact, prices)
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise SpecError("seed", "must be an integer")
    samples = dict(DEFAULT_SAMPLES)
    extra = raw.get("samples") or {}
    for k, v in extra.items():
        if k not in samples or not isinstance(v, int) or v < 1:
            raise SpecError(f"samples.{k}", "unknown key or not a positive integer")
        samples[k] = v
    return ProblemSpec(
        raw=dict(raw),
        tree=tree,
        engine=engine,
        reward=reward,
        eq=eq,
        seed=seed,
        budgets=budgets,
        lambda_grid=_parse_grid(raw, eq),
        start=_parse_start(raw, tree),
        samples=samples,
        prices=prices,
    )


def parse_tree_section(raw: Mapping) -> FiltrationTree:
    """Just the tree of a problem file, for commands that need nothing else."""
    if not isinstance(raw, Mapping):
        raise SpecError("spec", "top level must be a JSON object")
    eq = _parse_mode(raw)
    tree, _ = _parse_tree(raw, eq.exact, _parse_budgets(raw))
    return tree


def load_spec(path: str, **overrides) -> ProblemSpec:
    return parse_spec(apply_overrides(load_json(path), **overrides))


# seeded generation

def _rand_row(rng, k):
    weights = [rng.randint(1, 6) for _ in range(k)]
    total = sum(weights)
    return [Fraction(w, total) for w in weights]


def _rand_value(rng):
    return Fraction(rng.randint(0, 24), rng.randint(1, 4))


def _gen_tree(rng, depth, branching, node_budget):
    nodes = [{"id": 0, "t": 0, "parent": None, "children": []}]
    frontier = [0]
    for t in range(1, depth + 1):
        nxt = []
        for p in frontier:
            k = branching if branching else rng.randint(2, 3)
            for _ in range(k):
                nid = len(nodes)
                if nid >= node_budget:
                    raise HorizonTooLarge(f"generated tree exceeds the node budget {node_budget}")
                nodes.append({"id": nid, "t": t, "parent": p, "children": []})
                nodes[p]["children"].append(nid)
                nxt.append(nid)
        frontier = nxt
    return {"num_steps": depth, "nodes": nodes}


def _gen_engine(rng, tree_raw, kind):
    arity = {n["id"]: len(n["children"]) for n in tree_raw["nodes"] if n["children"]}
    if kind == "linear":
        return {"kind": "linear", "kernels": {str(n): [str(x) for x in _rand_row(rng, k)] for n, k in arity.items()}}
    if kind == "upper_prior":
        priors = {}
        for n, k in arity.items():
            rows = []
            for _ in range(rng.randint(2, 4)):
                row = [str(x) for x in _rand_row(rng, k)]
                if row not in rows:
                    rows.append(row)
            priors[str(n)] = rows
        return {"kind": "upper_prior", "priors": priors}
    if kind == "g_driver":
        if any(k != 2 for k in arity.values()):
            raise ValueError("g_driver engines need a binary tree")
        return {"kind": "g_driver", "p": "1/2", "kappa": rng.choice(["0", "1/10", "1/5"]), "dt": "1"}
    raise ValueError(f"unknown engine kind {kind!r}")


def _paths_tuples(tree_raw, d):
    # every length-d tuple of nodes lying on one root-to-leaf path
    parent = {n["id"]: n["parent"] for n in tree_raw["nodes"]}
    leaves = [n["id"] for n in tree_raw["nodes"] if not n["children"]]
    seen = set()
    out = []
    for leaf in leaves:
        path = []
        n = leaf
        while n is not None:
            path.append(n)
            n = parent[n]
        path.reverse()
        stack = [()]
        while stack:
            cur = stack.pop()
            if len(cur) == d:
                if cur not in seen:
                    seen.add(cur)
                    out.append(cur)
                continue
            for m in path:
                stack.append(cur + (m,))
    return sorted(out)


def _gen_reward(rng, tree_raw, kind, d):
    n_nodes = len(tree_raw["nodes"])
    if kind == "process":
        return {"kind": "process", "values": [str(_rand_value(rng)) for _ in range(n_nodes)]}
    Y = [str(_rand_value(rng)) for _ in range(n_nodes)]
    if kind == "additive":
        return {"kind": "additive", "d": d, "Y": Y}
    if kind == "refraction_swing":
        return {"kind": "refraction_swing", "d": d, "delta": 1, "Y": Y}
    if kind == "table":
        entries = [{"nodes": list(k), "value": str(_rand_value(rng))} for k in _paths_tuples(tree_raw, d)]
        return {"kind": "table", "d": d, "table": entries}
    raise ValueError(f"unknown reward kind {kind!r}")


def generate_instance(kind: str, depth: int, seed: int, *, d: int = 2, branching: int | None = None,
                      engine: str | None = None, reward: str | None = None,
                      node_budget: int = DEFAULT_NODE_BUDGET) -> ProblemSpec:
    """Deterministic random instance.

    ``kind`` is "single" or "multi". Branching is drawn from {2, 3} per node
    unless fixed; rewards are rationals ``a/b`` with ``0 <= a <= 24`` and
    ``1 <= b <= 4``; kernels have denominators at most 18, far above the
    default ``min_prob``. Engine and reward kinds are drawn from the seed when
    not given.
    """
    if kind not in ("single", "multi"):
        raise ValueError(f"kind must be 'single' or 'multi', got {kind!r}")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = random.Random(f"{kind}:{depth}:{seed}:{d}:{branching}:{engine}:{reward}")
    tree_raw = _gen_tree(rng, depth, branching, node_budget)
    engine = engine or rng.choice(["linear", "upper_prior"])
    n_nodes = len(tree_raw["nodes"])
    if kind == "single":
        reward = reward or "process"
    else:
        reward = reward or rng.choice(list(MULTI_KINDS) if n_nodes <= 40 else ["additive", "refraction_swing"])
    raw = {
        "schema_version": SCHEMA_VERSION,
        "generator": {"kind": kind, "depth": depth, "seed": seed, "d": d, "branching": branching},
        "tree": tree_raw,
        "engine": _gen_engine(rng, tree_raw, engine),
        "reward": _gen_reward(rng, tree_raw, reward, d),
        "mode": "exact",
        "seed": seed,
        "lambda_grid": list(DEFAULT_LAMBDA_GRID),
    }
    return parse_spec(raw)

