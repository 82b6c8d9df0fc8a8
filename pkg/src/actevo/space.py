"""Exact sizes of the graph and tree search spaces, and output-based dedup."""

import csv
import io
import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

from .graph.construct import core_unit
from .graph.fingerprint import fingerprint
from .graph.graph import AfnGraph
from .graph.operators import get_table

CONVENTIONS = ("capped", "ordered", "unordered")
# binary nodes may nest at most this deep under the "capped" convention
CAPPED_BINARY_DEPTH = 2


@dataclass(frozen=True)
class ShapeCount:
    b: int
    u: int
    e: int
    arrangements: int

    @property
    def nodes(self):
        return self.b + self.u


def edge_count(u, b):
    """Edges of a tree with ``u`` unary and ``b`` binary nodes, counting the
    input stubs and the edge into the output."""
    return u + 2 * b + 1


def count_functions(shape, U=27, B=7, E=3):
    """Number of distinct functions on one graph shape: operator choices times
    the ways to place up to ``E`` parameters on its edges."""
    b, u, e = shape.b, shape.u, shape.e
    if min(b, u, e, U, B, E) < 0:
        raise ValueError("counts must be non-negative")
    return U ** u * B ** b * sum(comb(e, i) for i in range(E + 1))


# ------------------------------------------------------------- shape counts
@lru_cache(maxsize=None)
def _ordered(b, u, depth):
    """Ordered trees with ``b`` binary and ``u`` unary nodes whose binary
    nesting is at most ``depth`` (None for unlimited).  Binary inputs are
    never the bare input: every leaf is a unary node applied to x."""
    if b == 0 and u == 0:
        return 1
    total = _ordered(b, u - 1, depth) if u > 0 else 0
    if b > 0 and (depth is None or depth > 0):
        sub = None if depth is None else depth - 1
        for b1 in range(b):
            for u1 in range(u + 1):
                left = _nonempty(b1, u1, sub)
                if left:
                    total += left * _nonempty(b - 1 - b1, u - u1, sub)
    return total


def _nonempty(b, u, depth):
    return 0 if b == 0 and u == 0 else _ordered(b, u, depth)


@lru_cache(maxsize=None)
def _unordered_shapes(b, u):
    """Canonical shape strings when binary children are unordered."""
    if b == 0 and u == 0:
        return frozenset({"X"})
    out = set()
    if u > 0:
        out.update(f"U({s})" for s in _unordered_shapes(b, u - 1))
    if b > 0:
        for b1 in range(b):
            for u1 in range(u + 1):
                b2, u2 = b - 1 - b1, u - u1
                if (b1, u1) == (0, 0) or (b2, u2) == (0, 0):
                    continue
                for s1 in _unordered_shapes(b1, u1):
                    for s2 in _unordered_shapes(b2, u2):
                        out.add("B(" + ",".join(sorted((s1, s2))) + ")")
    return frozenset(out)


def arrangements(b, u, convention="capped"):
    if convention == "capped":
        return _ordered(b, u, CAPPED_BINARY_DEPTH)
    if convention == "ordered":
        return _ordered(b, u, None)
    if convention == "unordered":
        return len(_unordered_shapes(b, u))
    raise ValueError(f"unknown convention {convention!r}; choose from {CONVENTIONS}")


def count_shapes(j, convention="capped"):
    """Shape classes with ``j`` nodes, one ShapeCount per binary-node count."""
    if j < 1:
        raise ValueError("node count must be >= 1")
    rows = []
    for b in range(j + 1):
        u = j - b
        n = arrangements(b, u, convention)
        if n:
            rows.append(ShapeCount(b, u, edge_count(u, b), n))
    return rows


def tier_size(j, U=27, B=7, E=3, convention="capped"):
    return sum(s.arrangements * count_functions(s, U, B, E) for s in count_shapes(j, convention))


def total_space_size(max_nodes=7, U=27, B=7, E=3, convention="capped"):
    return sum(tier_size(j, U, B, E, convention) for j in range(1, max_nodes + 1))


@dataclass(frozen=True)
class SizeRow:
    tier: int
    b: int
    u: int
    e: int
    arrangements: int
    functions: int


def size_table(max_nodes=7, U=27, B=7, E=3, convention="capped"):
    """Rows of the per-shape table plus per-tier subtotals."""
    rows = []
    tiers = {}
    for j in range(1, max_nodes + 1):
        for s in count_shapes(j, convention):
            n = s.arrangements * count_functions(s, U, B, E)
            rows.append(SizeRow(j, s.b, s.u, s.e, s.arrangements, n))
            tiers[j] = tiers.get(j, 0) + n
    return rows, tiers


def format_size_table(max_nodes=7, U=27, B=7, E=3, convention="capped", fmt="text"):
    rows, tiers = size_table(max_nodes, U, B, E, convention)
    total = sum(tiers.values())
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tier", "b", "u", "e", "arrangements", "functions", "tier_total"])
        for r in rows:
            w.writerow([r.tier, r.b, r.u, r.e, r.arrangements, r.functions, tiers[r.tier]])
        w.writerow(["total", "", "", "", "", "", total])
        return buf.getvalue()
    header = f"{'tier':>4} {'b':>2} {'u':>2} {'e':>3} {'arr':>4} {'functions':>22} {'tier total':>22}"
    lines = [header, "-" * len(header)]
    last = None
    for r in rows:
        sub = f"{tiers[r.tier]:,}" if r.tier != last else ""
        tier = f"G{r.tier}" if r.tier != last else ""
        last = r.tier
        lines.append(f"{tier:>4} {r.b:>2} {r.u:>2} {r.e:>3} {r.arrangements:>4} "
                     f"{r.functions:>22,} {sub:>22}")
    lines.append(f"total {total:,}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ CAFE spaces
def cafe_space_size(depth, table="cafe"):
    """|S_1| = B * U^2 and |S_d| = |S_1| * |S_{d-1}|^2."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    table = get_table(table)
    s1 = len(table.binary) * len(table.unary) ** 2
    size = s1
    for _ in range(depth - 1):
        size = s1 * size * size
    return size


# ------------------------------------------------------------------ dedup
@dataclass(frozen=True)
class DedupResult:
    total: int
    unique: int
    representatives: list
    class_sizes: list


def enumerate_three_node(table):
    table = get_table(table)
    for b, u1, u2 in itertools.product(table.binary, table.unary, table.unary):
        yield AfnGraph(core_unit(b.name, u1.name, u2.name), table)


def enumerate_and_dedup(form="three_node", table="pangaea"):
    """Enumerate ``binary(unary(x), unary(x))`` and group by fingerprint.

    Each class is represented by its lexicographically least function string.
    """
    if form != "three_node":
        raise ValueError(f"unsupported form {form!r}")
    classes = {}
    total = 0
    for g in enumerate_three_node(table):
        total += 1
        classes.setdefault(fingerprint(g).key, []).append(g.format())
    reps = sorted(min(members) for members in classes.values())
    sizes = sorted((len(m) for m in classes.values()), reverse=True)
    return DedupResult(total, len(classes), reps, sizes)
