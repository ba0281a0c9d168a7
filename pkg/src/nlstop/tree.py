"""Finite filtration trees, adapted node processes and stopping rules.

A node is an atom of the sigma-field at its time, so a random variable
measurable at time ``t`` is one number per time-``t`` node, and an adapted
process is one number per node. A stopping time is a set of flagged nodes
with exactly one flag on every root-to-leaf path (the canonical form).

Stopping rules may live on a subtree: ``rule.root`` is the node the rule
starts from, which is how stopping times at-or-after a node are expressed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import (
    HorizonTooLarge,
    MalformedTree,
    NegativeReward,
    NodeNotInSubtree,
    NonCanonicalRule,
    TreeMismatch,
)

DEFAULT_NODE_BUDGET = 10**6


@dataclass(frozen=True)
class Node:
    id: int
    t: int
    parent: int | None
    children: tuple[int, ...]


class FiltrationTree:
    """Immutable rooted tree whose depth-``t`` nodes are the atoms of F_t.

    Use :func:`build_tree` or :func:`build_binomial` rather than calling the
    constructor, which trusts its input.
    """

    def __init__(self, num_steps: int, nodes: Sequence[Node]):
        self.num_steps = num_steps
        self.nodes = tuple(nodes)
        self.root = next(n.id for n in self.nodes if n.parent is None)
        preorder = []
        stack = [self.root]
        while stack:
            n = stack.pop()
            preorder.append(n)
            stack.extend(reversed(self.nodes[n].children))
        self._preorder = tuple(preorder)
        enter = [0] * len(self.nodes)
        for i, n in enumerate(preorder):
            enter[n] = i
        size = [1] * len(self.nodes)
        for n in reversed(preorder):
            p = self.nodes[n].parent
            if p is not None:
                size[p] += size[n]
        self._enter = tuple(enter)
        self._size = tuple(size)

    def __repr__(self):
        return f"FiltrationTree(num_steps={self.num_steps}, num_nodes={self.num_nodes})"

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, FiltrationTree):
            return NotImplemented
        return self.num_steps == other.num_steps and self.nodes == other.nodes

    def __hash__(self):
        return self._hash

    @cached_property
    def _hash(self):
        return hash((self.num_steps, self.nodes))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def time(self, n: int) -> int:
        return self.nodes[n].t

    def parent(self, n: int) -> int | None:
        return self.nodes[n].parent

    def children(self, n: int) -> tuple[int, ...]:
        return self.nodes[n].children

    def is_leaf(self, n: int) -> bool:
        return not self.nodes[n].children

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        return tuple(n for n in self._preorder if self.is_leaf(n))

    @cached_property
    def layers(self) -> tuple[tuple[int, ...], ...]:
        out = [[] for _ in range(self.num_steps + 1)]
        for n in self._preorder:
            out[self.time(n)].append(n)
        return tuple(tuple(layer) for layer in out)

    def subtree(self, n: int) -> tuple[int, ...]:
        """Nodes of the subtree rooted at ``n``, in preorder (``n`` first)."""
        i = self._enter[n]
        return self._preorder[i : i + self._size[n]]

    def subtree_size(self, n: int) -> int:
        return self._size[n]

    def leaves_under(self, n: int) -> tuple[int, ...]:
        return tuple(m for m in self.subtree(n) if self.is_leaf(m))

    def is_ancestor_or_self(self, a: int, b: int) -> bool:
        ea = self._enter[a]
        return ea <= self._enter[b] < ea + self._size[a]

    def comparable(self, a: int, b: int) -> bool:
        return self.is_ancestor_or_self(a, b) or self.is_ancestor_or_self(b, a)

    def path_to(self, n: int) -> tuple[int, ...]:
        """Nodes from the root down to ``n`` inclusive."""
        out = []
        while n is not None:
            out.append(n)
            n = self.parent(n)
        return tuple(reversed(out))

    def to_dict(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "nodes": [
                {"id": n.id, "t": n.t, "parent": n.parent, "children": list(n.children)}
                for n in self.nodes
            ],
        }


def build_tree(spec: Mapping) -> FiltrationTree:
    """Validate an explicit node list ``{num_steps, nodes: [{id, t, parent, children}]}``.

    ``children`` may be omitted, in which case child order follows node id.
    """
    try:
        num_steps = int(spec["num_steps"])
        raw = list(spec["nodes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedTree(f"tree spec needs num_steps and nodes ({exc})") from None
    if num_steps < 0:
        raise MalformedTree("num_steps must be >= 0")
    if not raw:
        raise MalformedTree("no nodes")
    by_id = {}
    for item in raw:
        nid = int(item["id"])
        if nid in by_id:
            raise MalformedTree(f"duplicate node id {nid}")
        by_id[nid] = item
    if sorted(by_id) != list(range(len(by_id))):
        raise MalformedTree("node ids must be dense integers 0..num_nodes-1")

    parents = {}
    for nid, item in by_id.items():
        p = item.get("parent")
        if p is not None:
            p = int(p)
            if p not in by_id:
                raise MalformedTree(f"orphan node {nid}: parent {p} does not exist")
        parents[nid] = p
    roots = [nid for nid, p in parents.items() if p is None]
    if len(roots) != 1:
        raise MalformedTree(f"expected exactly one root, found {len(roots)}")

    derived = {nid: [] for nid in by_id}
    for nid in sorted(by_id):
        if parents[nid] is not None:
            derived[parents[nid]].append(nid)
    children = {}
    for nid, item in by_id.items():
        if item.get("children") is None:
            children[nid] = tuple(derived[nid])
            continue
        listed = tuple(int(c) for c in item["children"])
        if sorted(listed) != sorted(derived[nid]) or len(set(listed)) != len(listed):
            raise MalformedTree(f"children of node {nid} disagree with parent links")
        children[nid] = listed

    nodes = []
    for nid in range(len(by_id)):
        t = int(by_id[nid]["t"])
        nodes.append(Node(nid, t, parents[nid], children[nid]))
    root = roots[0]
    if nodes[root].t != 0:
        raise MalformedTree(f"root {root} must be at t=0, found t={nodes[root].t}")
    for n in nodes:
        if n.t < 0 or n.t > num_steps:
            raise MalformedTree(f"node {n.id} at t={n.t} outside 0..{num_steps}")
        for c in n.children:
            if nodes[c].t != n.t + 1:
                raise MalformedTree(
                    f"child {c} of node {n.id} is at t={nodes[c].t}, expected {n.t + 1}"
                )
        if n.t < num_steps and not n.children:
            raise MalformedTree(f"leaf {n.id} at t={n.t} < num_steps={num_steps}")
        if n.t == num_steps and n.children:
            raise MalformedTree(f"node {n.id} at the horizon has children")
    # time increases by one along every edge, so a cycle is impossible and
    # every node reaches the unique root
    return FiltrationTree(num_steps, nodes)


@dataclass(frozen=True)
class LatticeSpec:
    num_steps: int
    s0: object
    up: object
    down: object

    def __post_init__(self):
        if self.num_steps < 1:
            raise MalformedTree("lattice needs num_steps >= 1")
        if not (self.up > self.down > 0):
            raise MalformedTree("lattice needs up > down > 0")


def build_binomial(spec: LatticeSpec, node_budget: int = DEFAULT_NODE_BUDGET):
    """Path-expanded binomial tree and its price process.

    Children are ordered (up, down). The tree is not recombining: it has
    ``2**N`` leaves, so path-dependent rewards are representable.
    """
    n_nodes = 2 ** (spec.num_steps + 1) - 1
    if n_nodes > node_budget:
        raise HorizonTooLarge(
            f"binomial tree with N={spec.num_steps} has {n_nodes} nodes, budget {node_budget}"
        )
    nodes = []
    prices = []
    # breadth-first ids: node k has children 2k+1 (up) and 2k+2 (down)
    ups = [0]
    for nid in range(n_nodes):
        t = (nid + 1).bit_length() - 1
        parent = None if nid == 0 else (nid - 1) // 2
        kids = () if t == spec.num_steps else (2 * nid + 1, 2 * nid + 2)
        nodes.append(Node(nid, t, parent, kids))
        if nid > 0:
            ups.append(ups[parent] + (1 if nid % 2 == 1 else 0))
        k = ups[nid]
        prices.append(spec.s0 * spec.up**k * spec.down ** (t - k))
    return FiltrationTree(spec.num_steps, nodes), NodeProcess(tuple(prices))


@dataclass(frozen=True)
class NodeProcess:
    """One value per node; ``None`` marks nodes outside the process's domain."""

    values: tuple

    def __getitem__(self, n):
        return self.values[n]

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_values(cls, tree: FiltrationTree, values) -> "NodeProcess":
        """Build from a sequence indexed by node id or a ``{node: value}`` map."""
        if isinstance(values, Mapping):
            out = [None] * tree.num_nodes
            for k, v in values.items():
                out[int(k)] = v
        else:
            out = list(values)
            if len(out) != tree.num_nodes:
                raise MalformedTree(
                    f"process has {len(out)} values for {tree.num_nodes} nodes"
                )
        return cls(tuple(out))

    @classmethod
    def constant(cls, tree: FiltrationTree, c) -> "NodeProcess":
        return cls((c,) * tree.num_nodes)

    def require_total(self, nodes: Iterable[int]):
        missing = [n for n in nodes if self.values[n] is None]
        if missing:
            raise MalformedTree(f"process undefined at nodes {missing[:10]}")

    def check_nonnegative(self, nodes: Iterable[int] | None = None):
        idx = range(len(self.values)) if nodes is None else nodes
        for n in idx:
            v = self.values[n]
            if v is not None and v < 0:
                raise NegativeReward(n, v)


@dataclass(frozen=True)
class StoppingRule:
    """Stopping time as a set of flagged nodes within ``subtree(root)``.

    Canonical when every root-to-leaf path below ``root`` meets exactly one
    flag. Most operations require canonical rules; :func:`canonicalize`
    produces one.
    """

    tree: FiltrationTree = field(repr=False)
    flagged: frozenset
    root: int

    @cached_property
    def is_canonical(self) -> bool:
        tree = self.tree
        inside = set(tree.subtree(self.root))
        if not self.flagged <= inside:
            return False
        # count flags from root to each node; leaves must see exactly one
        seen = {self.root: 1 if self.root in self.flagged else 0}
        for n in tree.subtree(self.root):
            k = seen[n]
            if k > 1:
                return False
            for c in tree.children(n):
                seen[c] = k + (1 if c in self.flagged else 0)
            if tree.is_leaf(n) and k != 1:
                return False
        return True

    @cached_property
    def stop_nodes(self) -> tuple[int, ...]:
        """Flagged nodes in preorder: the atoms of the stopped sigma-field."""
        self._require_canonical()
        return tuple(n for n in self.tree.subtree(self.root) if n in self.flagged)

    @cached_property
    def _stop_of_leaf(self) -> dict:
        self._require_canonical()
        out = {}
        for s in self.stop_nodes:
            for leaf in self.tree.leaves_under(s):
                out[leaf] = s
        return out

    def _require_canonical(self):
        if not self.is_canonical:
            raise NonCanonicalRule("stopping rule is not canonical")

    def stop_times(self) -> dict:
        """``{leaf: stop time}`` over the leaves below ``root``."""
        return {leaf: self.tree.time(s) for leaf, s in self._stop_of_leaf.items()}

    def node_list(self) -> list[int]:
        return sorted(self.flagged)


def make_rule(tree: FiltrationTree, nodes: Iterable[int], root: int | None = None) -> StoppingRule:
    """Rule flagging ``nodes``, canonicalized (unflagged paths stop at the leaf)."""
    root = tree.root if root is None else root
    return canonicalize(StoppingRule(tree, frozenset(int(n) for n in nodes), root))


def stop_at(tree: FiltrationTree, node: int) -> StoppingRule:
    """The stopping time equal to t(node) on the subtree of ``node``."""
    return StoppingRule(tree, frozenset((node,)), node)


def stop_at_time(tree: FiltrationTree, t: int, root: int | None = None) -> StoppingRule:
    root = tree.root if root is None else root
    if t < tree.time(root):
        raise ValueError(f"time {t} precedes the rule root at t={tree.time(root)}")
    flags = frozenset(n for n in tree.subtree(root) if tree.time(n) == t)
    return StoppingRule(tree, flags, root)


def stop_at_leaves(tree: FiltrationTree, root: int | None = None) -> StoppingRule:
    root = tree.root if root is None else root
    return StoppingRule(tree, frozenset(tree.leaves_under(root)), root)


def canonicalize(rule: StoppingRule) -> StoppingRule:
    """Keep the first flag on each path; flag the leaf of any path without one."""
    tree = rule.tree
    keep = set()
    covered = {}
    for n in tree.subtree(rule.root):
        p = tree.parent(n)
        above = covered.get(p, False) if n != rule.root else False
        if not above and (n in rule.flagged or tree.is_leaf(n)):
            keep.add(n)
            covered[n] = True
        else:
            covered[n] = above
    flags = frozenset(keep)
    if flags == rule.flagged:
        return rule
    return StoppingRule(tree, flags, rule.root)


def stop_node(rule: StoppingRule, leaf: int) -> int:
    """The flagged ancestor-or-self of ``leaf``."""
    rule._require_canonical()
    try:
        return rule._stop_of_leaf[leaf]
    except KeyError:
        raise NodeNotInSubtree(f"leaf {leaf} is not below rule root {rule.root}") from None


def _same_domain(a: StoppingRule, b: StoppingRule):
    if a.tree != b.tree:
        raise TreeMismatch("rules live on different trees")
    if a.root != b.root:
        raise TreeMismatch(f"rules start at different nodes ({a.root} vs {b.root})")


def meet(a: StoppingRule, b: StoppingRule) -> StoppingRule:
    """Pathwise minimum of two stopping times."""
    _same_domain(a, b)
    a._require_canonical()
    b._require_canonical()
    return canonicalize(StoppingRule(a.tree, a.flagged | b.flagged, a.root))


def join(a: StoppingRule, b: StoppingRule) -> StoppingRule:
    """Pathwise maximum of two stopping times."""
    _same_domain(a, b)
    tree = a.tree
    flags = set()
    for leaf in tree.leaves_under(a.root):
        x, y = stop_node(a, leaf), stop_node(b, leaf)
        flags.add(x if tree.time(x) >= tree.time(y) else y)
    return StoppingRule(tree, frozenset(flags), a.root)


def rule_le(a: StoppingRule, b: StoppingRule) -> bool:
    """True when ``a`` stops no later than ``b`` on every path."""
    _same_domain(a, b)
    ta, tb = a.stop_times(), b.stop_times()
    return all(ta[leaf] <= tb[leaf] for leaf in ta)


def follows(tau: StoppingRule, s: StoppingRule) -> bool:
    """True when ``tau`` stops at-or-after ``s`` on every path below ``s.root``."""
    return rule_le(s, tau)


def random_rule(
    tree: FiltrationTree,
    rng: random.Random,
    root: int | None = None,
    stop_prob: float = 0.35,
    after: StoppingRule | None = None,
) -> StoppingRule:
    """Random canonical rule; with ``after`` it stops at-or-after that rule."""
    root = tree.root if root is None else root
    starts = after.stop_nodes if after is not None else (root,)
    flags = set()
    for s in starts:
        stack = [s]
        while stack:
            n = stack.pop()
            if tree.is_leaf(n) or rng.random() < stop_prob:
                flags.add(n)
            else:
                stack.extend(tree.children(n))
    return StoppingRule(tree, frozenset(flags), root if after is None else after.root)
