"""Graph constructors: random initial graphs, indicator functions, CAFE trees."""

import itertools

import numpy as np

from ..errors import InvalidInterval
from .graph import X, AfnGraph, Op, Param
from .operators import get_table


def _choice(rng, ops):
    return ops[int(rng.integers(len(ops)))].name


def random_initial_graph(table, rng):
    """Either ``u1(u2(x))`` or ``b(u1(x), u2(x))``, each with probability 1/2."""
    table = get_table(table)
    if rng.random() < 0.5:
        inner = Op(_choice(rng, table.unary), (X,))
        root = Op(_choice(rng, table.unary), (inner,))
    else:
        b = _choice(rng, table.binary)
        u1 = _choice(rng, table.unary)
        u2 = _choice(rng, table.unary)
        root = Op(b, (Op(u1, (X,)), Op(u2, (X,))))
    return AfnGraph(root, table)


# -------------------------------------------------------------- indicators
def _const(value, label):
    """The constant ``value`` as a graph node: a fixed multiplier on one(x)."""
    return Param(label, Op("one", (X,)), init=float(value), granularity="per-layer")


def _below(b, label="b"):
    """1 for x < b, else 0:  max(b - x, 0) / (b - x)."""
    gap = Op("sub", (_const(b, label), X))
    return Op("div", (Op("max", (gap, Op("zero", (X,)))), gap))


def _above(a, label="a"):
    """1 for x > a, else 0:  max(x - a, 0) / (x - a)."""
    gap = Op("sub", (X, _const(a, label)))
    return Op("div", (Op("max", (gap, Op("zero", (X,)))), gap))


def _complement(node):
    return Op("sub", (Op("one", (X,)), node))


def build_indicator(kind, a=None, b=None, table="pangaea"):
    """Graph of the indicator of an open half-line, an open interval or a point.

    ``left_open`` is 1 on (-inf, b), ``right_open`` 1 on (a, inf),
    ``interval`` 1 on (a, b) and ``point`` 1 at exactly a.  Constants are
    stored as fixed multipliers on ``one(x)`` (parameters whose initial
    value is the constant), so the graphs use only table operators.
    """
    table = get_table(table)
    if kind == "left_open":
        root = _below(b)
    elif kind == "right_open":
        root = _above(a)
    elif kind == "interval":
        if a is None or b is None or not a < b:
            raise InvalidInterval(f"interval needs a < b, got a={a!r}, b={b!r}")
        root = Op("mul", (_above(a, "a"), _below(b, "b")))
    elif kind == "point":
        # (1 - 1[x < a]) * (1 - 1[x > a])
        root = Op("mul", (_complement(_below(a, "a")), _complement(_above(a, "a"))))
    else:
        raise ValueError(f"unknown indicator kind {kind!r}")
    return AfnGraph(root, table)


def indicator_reference(kind, x, a=None, b=None):
    x = np.asarray(x, dtype=float)
    if kind == "left_open":
        out = x < b
    elif kind == "right_open":
        out = x > a
    elif kind == "interval":
        out = (x > a) & (x < b)
    elif kind == "point":
        out = x == a
    else:
        raise ValueError(kind)
    return out.astype(float)


# ------------------------------------------------------------- CAFE trees
def core_unit(b, u1, u2, left=X, right=X):
    """``b(u1(left), u2(right))``."""
    return Op(b, (Op(u1, (left,)), Op(u2, (right,))))


def random_cafe_tree(table, depth, rng):
    """Uniform sample from the balanced depth-``depth`` space S_d."""
    table = get_table(table)
    if depth < 1:
        raise ValueError("depth must be >= 1")

    def build(d):
        b = _choice(rng, table.binary)
        u1 = _choice(rng, table.unary)
        u2 = _choice(rng, table.unary)
        if d == 1:
            return core_unit(b, u1, u2)
        return core_unit(b, u1, u2, build(d - 1), build(d - 1))

    return AfnGraph(build(depth), table)


def cafe_depth(graph):
    """Number of core-unit levels, or None if ``graph`` is not a balanced S_d tree."""

    def level(node):
        if node is X:
            return 0
        if not (isinstance(node, Op) and node.arity == 2):
            return None
        subs = []
        for c in node.children:
            if not (isinstance(c, Op) and c.arity == 1):
                return None
            subs.append(level(c.children[0]))
        if subs[0] is None or subs[0] != subs[1]:
            return None
        return subs[0] + 1

    return level(graph.strip_params().root)


def enumerate_s1(table):
    """Every S_1 function string, in table order."""
    table = get_table(table)
    for b, u1, u2 in itertools.product(table.binary, table.unary, table.unary):
        yield AfnGraph(core_unit(b.name, u1.name, u2.name), table)
