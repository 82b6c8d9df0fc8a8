"""Mutation, parameterization and crossover of activation graphs.

The four graph mutations (insert, remove, change, regenerate) operate on
parameter-free trees; ``mutate`` strips the parent's parameters first and
the caller re-parameterizes the child.  CAFE trees use a single node-swap
mutation and a shape-preserving subtree crossover.
"""

from enum import Enum

from .graph.construct import cafe_depth
from .graph.graph import (PARAM_LABELS, X, AfnGraph, Op, Param, _descend, _height, _unwrap,
                          replace_at)
from .graph.operators import get_table

MAX_NODES = 7
MAX_PARAMS = 3


class MutationKind(str, Enum):
    INSERT = "insert"
    REMOVE = "remove"
    CHANGE = "change"
    REGENERATE = "regenerate"
    CAFE_NODE_SWAP = "cafe_node_swap"


GRAPH_MUTATIONS = (MutationKind.INSERT, MutationKind.REMOVE, MutationKind.CHANGE,
                   MutationKind.REGENERATE)


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _other_op(rng, table, name, arity):
    """A uniformly drawn operator of ``arity`` different from ``name`` when possible."""
    ops = [op.name for op in table.of_arity(arity)]
    if len(ops) >= 2:
        ops = [n for n in ops if n != name]
    return _pick(rng, ops)


def _prepare(parent, table):
    table = get_table(table) if table is not None else parent.table
    return parent.strip_params().root, table


# ------------------------------------------------------------------ insert
def _filler(name, incoming):
    """Second input that makes ``name(incoming, filler)`` equal to ``incoming``."""
    if name in ("add", "sub"):
        return Op("zero", (X,))
    if name in ("mul", "div", "pow"):
        return Op("one", (X,))
    if name in ("max", "min"):
        return incoming
    raise ValueError(f"no identity input known for binary operator {name!r}")


def insert_at(root, path, name, table):
    op = table[name]

    def wrap(sub):
        if op.arity == 1:
            return Op(name, (sub,))
        return Op(name, (sub, _filler(name, sub)))

    return replace_at(root, path, wrap)


def mutate_insert(parent, table=None, rng=None):
    """Insert a uniformly drawn operator on a uniformly drawn edge."""
    root, table = _prepare(parent, table)
    g = AfnGraph(root, table)
    path = _pick(rng, g.edges)
    name = _pick(rng, table.unary + table.binary).name
    return AfnGraph(insert_at(root, path, name, table), table)


# ------------------------------------------------------------------ remove
def remove_at(root, path, keep=0):
    """Delete the node feeding ``path``; for a binary node keep child ``keep``."""
    node = _unwrap(_descend(root, path))
    survivor = node.children[0] if node.arity == 1 else node.children[keep]
    return replace_at(root, path, lambda _: survivor)


def mutate_remove(parent, table=None, rng=None):
    """Delete one uniformly chosen node, rewiring its input to its output."""
    root, table = _prepare(parent, table)
    g = AfnGraph(root, table)
    path = _pick(rng, g.node_paths)
    node = g.node_at(path)
    keep = int(rng.integers(2)) if node.arity == 2 else 0
    child = remove_at(root, path, keep)
    if _unwrap(child) is X and node.arity == 2:
        # a binary root with a bare-x branch: keep the other branch so the
        # child still contains an operator
        child = remove_at(root, path, 1 - keep)
    return AfnGraph(child, table)


# ------------------------------------------------------------------ change
def change_at(root, path, name):
    node = _unwrap(_descend(root, path))
    return replace_at(root, path, lambda _: Op(name, node.children))


def mutate_change(parent, table=None, rng=None):
    """Replace one uniformly chosen node's operator with a different one of the same arity."""
    root, table = _prepare(parent, table)
    g = AfnGraph(root, table)
    path = _pick(rng, g.node_paths)
    node = g.node_at(path)
    return AfnGraph(change_at(root, path, _other_op(rng, table, node.name, node.arity)), table)


# -------------------------------------------------------------- regenerate
def mutate_regenerate(parent, table=None, rng=None):
    """Resample every operator; the tree shape is kept."""
    root, table = _prepare(parent, table)

    def regen(node):
        if node is X:
            return X
        kids = tuple(regen(c) for c in node.children)
        return Op(_other_op(rng, table, node.name, node.arity), kids)

    return AfnGraph(regen(root), table)


_DISPATCH = {
    MutationKind.INSERT: mutate_insert,
    MutationKind.REMOVE: mutate_remove,
    MutationKind.CHANGE: mutate_change,
    MutationKind.REGENERATE: mutate_regenerate,
}


def choose_mutation(graph, rng, forced=None):
    """Uniform draw over the four mutations, then the two special cases:
    more than MAX_NODES nodes forces a remove, and a remove on a single
    node becomes a change."""
    kind = MutationKind(forced) if forced is not None else _pick(rng, GRAPH_MUTATIONS)
    n = graph.op_count
    if n > MAX_NODES:
        kind = MutationKind.REMOVE
    if kind is MutationKind.REMOVE and n <= 1:
        kind = MutationKind.CHANGE
    return kind


def mutate(parent, table=None, rng=None, kind=None, return_kind=False):
    """Apply one dispatched mutation.  ``kind`` forces the draw (special
    cases still apply).  The child carries no parameters."""
    kind = choose_mutation(parent, rng, kind)
    child = _DISPATCH[kind](parent, table, rng)
    return (child, kind) if return_kind else child


# --------------------------------------------------------- parameterization
def parameterize(graph, rng, k=None, granularity="per-channel"):
    """Add ``k`` multiplicative parameters (initial value 1) on distinct free edges.

    ``k`` defaults to a uniform draw from {0, 1, 2, 3} and is clamped to the
    number of free edges and unused labels.  Labels are assigned in edge
    preorder.
    """
    if k is None:
        k = int(rng.integers(MAX_PARAMS + 1))
    taken = {site.edge for site in graph.params}
    free = [e for e in graph.edges if e not in taken]
    labels = [lab for lab in PARAM_LABELS if lab not in graph.param_labels]
    k = min(k, len(free), len(labels))
    if k <= 0:
        return graph
    picks = sorted(rng.choice(len(free), size=k, replace=False))
    root = graph.root
    for label, idx in zip(labels, picks):
        root = replace_at(root, free[idx], lambda sub, lab=label: Param(lab, sub, 1.0, granularity))
    return AfnGraph(root, graph.table)


# -------------------------------------------------------------------- CAFE
def cafe_mutate(parent, table=None, rng=None):
    """Swap the operator of one uniformly chosen node (unary for unary, binary for binary)."""
    root, table = _prepare(parent, table)
    g = AfnGraph(root, table)
    path = _pick(rng, g.node_paths)
    node = g.node_at(path)
    return AfnGraph(change_at(root, path, _other_op(rng, table, node.name, node.arity)), table)


def _paths_by_height(graph):
    out = {}
    for path in graph.node_paths:
        if path:
            out.setdefault(_height(graph.node_at(path)), []).append(path)
    return out


def cafe_crossover(p1, p2, rng):
    """Child of ``p1`` with one of its subtrees replaced by ``p2``'s subtree at the
    same position.

    A subtree height is drawn uniformly among the heights of non-root
    nodes, then a position uniformly among the nodes of that height.  In
    balanced trees every node of a given height has the same shape, so the
    child stays in the parents' space.
    """
    a = p1.strip_params()
    b = p2.strip_params()
    if cafe_depth(a) != cafe_depth(b) or cafe_depth(a) is None:
        raise ValueError("crossover parents must be balanced trees of equal depth")
    by_height = _paths_by_height(a)
    height = _pick(rng, sorted(by_height))
    path = _pick(rng, by_height[height])
    donor = _descend(b.root, path)
    return AfnGraph(replace_at(a.root, path, lambda _: donor), a.table)
