"""Activation functions as rooted operator trees.

A graph is an immutable tree of ``Op`` nodes over the single input ``X``.
Learnable multiplicative parameters are ``Param`` wrappers sitting on an
edge: ``Param("alpha", t)`` multiplies the value flowing out of ``t``.

Edges are addressed by the path of the node feeding them, with ``Param``
wrappers skipped, so an edge keeps its address when it is parameterized.
The root edge (into the output) has path ``()``.  For a tree with ``u``
unary and ``b`` binary nodes there are ``u + 2b + 1`` edges.
"""

import json
import re
from dataclasses import dataclass

from ..errors import ArityMismatch, GraphSyntaxError, UnknownOperator
from .operators import OperatorTable, get_table

PARAM_LABELS = ("alpha", "beta", "gamma")
GRANULARITIES = ("per-layer", "per-channel", "per-neuron")


class _Input:
    __slots__ = ()

    def __repr__(self):
        return "X"

    def __reduce__(self):
        return "X"


X = _Input()


@dataclass(frozen=True)
class Op:
    name: str
    children: tuple

    @property
    def arity(self):
        return len(self.children)


@dataclass(frozen=True)
class Param:
    label: str
    child: object
    init: float = 1.0
    granularity: str = "per-channel"


@dataclass(frozen=True)
class ParamSite:
    edge: tuple
    label: str
    granularity: str
    init_value: float


def _check(node, table):
    if node is X:
        return
    if isinstance(node, Param):
        if isinstance(node.child, Param):
            raise ValueError("an edge carries at most one parameter")
        _check(node.child, table)
        return
    op = table.get(node.name)
    if op is None:
        raise UnknownOperator(f"operator {node.name!r} is not in the {table.space} table",
                              node.name, None)
    if op.arity != len(node.children):
        raise ArityMismatch(f"{node.name!r} takes {op.arity} input(s), got {len(node.children)}",
                            node.name, None)
    for c in node.children:
        _check(c, table)


@dataclass(frozen=True)
class AfnGraph:
    root: object
    table: OperatorTable

    def __post_init__(self):
        _check(self.root, self.table)
        # a label may repeat only as a tied copy (same init and granularity)
        seen = {}
        for p in self.params:
            key = (p.init_value, p.granularity)
            if seen.setdefault(p.label, key) != key:
                raise ValueError(f"parameter {p.label!r} appears with conflicting settings")

    # structural queries -------------------------------------------------
    @property
    def op_count(self):
        return sum(1 for _, n in iter_sites(self.root) if isinstance(n, Op))

    @property
    def unary_count(self):
        return sum(1 for _, n in iter_sites(self.root) if isinstance(n, Op) and n.arity == 1)

    @property
    def binary_count(self):
        return sum(1 for _, n in iter_sites(self.root) if isinstance(n, Op) and n.arity == 2)

    @property
    def edges(self):
        """Every edge path, in preorder."""
        return [path for path, _ in iter_sites(self.root)]

    @property
    def node_paths(self):
        """Paths of operator nodes, in preorder."""
        return [path for path, n in iter_sites(self.root) if isinstance(n, Op)]

    @property
    def params(self):
        return [ParamSite(path, p.label, p.granularity, p.init) for path, p in iter_params(self.root)]

    @property
    def param_labels(self):
        return list(dict.fromkeys(p.label for p in self.params))

    @property
    def depth(self):
        return _height(self.root)

    def node_at(self, path):
        """The (unwrapped) node feeding edge ``path``."""
        return _unwrap(_descend(self.root, path))

    def shape_key(self):
        """Operator-free structure string, e.g. ``B(U(X),U(X))``."""
        return _shape(strip_params(self.root))

    def strip_params(self):
        return AfnGraph(strip_params(self.root), self.table)

    def with_root(self, root):
        return AfnGraph(root, self.table)

    # serialization ------------------------------------------------------
    def format(self):
        return format_node(self.root)

    def __str__(self):
        return self.format()

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_dict(self):
        """Node/edge/param listing.  Node 0 is the input; the last node is the output."""
        nodes = [{"id": 0, "op": "x", "arity": 0}]
        edges = []
        params = []

        def visit(node, path):
            # returns the id of the node whose value flows along this edge
            inner = _unwrap(node)
            if inner is X:
                src = 0
            else:
                child_ids = [visit(c, path + (i,)) for i, c in enumerate(inner.children)]
                src = len(nodes)
                nodes.append({"id": src, "op": inner.name, "arity": inner.arity})
                for slot, cid in enumerate(child_ids):
                    edges.append({"src": cid, "dst": src, "slot": slot, "path": list(path + (slot,))})
            if isinstance(node, Param):
                params.append({"path": list(path), "label": node.label,
                               "granularity": node.granularity, "init_value": node.init})
            return src

        out_src = visit(self.root, ())
        out_id = len(nodes)
        nodes.append({"id": out_id, "op": "output", "arity": 1})
        edges.append({"src": out_src, "dst": out_id, "slot": 0, "path": []})
        return {"table": self.table.space, "function": self.format(),
                "nodes": nodes, "edges": edges, "params": params}

    @classmethod
    def from_json(cls, text, table=None):
        data = json.loads(text) if isinstance(text, str) else text
        tbl = get_table(table or data["table"])
        nodes = {n["id"]: n for n in data["nodes"]}
        incoming = {}
        for e in data["edges"]:
            incoming.setdefault(e["dst"], {})[e["slot"]] = e
        sites = {tuple(p["path"]): p for p in data.get("params", [])}

        def build(node_id, path):
            n = nodes[node_id]
            if n["op"] == "x":
                inner = X
            else:
                slots = incoming.get(node_id, {})
                kids = tuple(build(slots[i]["src"], path + (i,)) for i in range(len(slots)))
                inner = Op(n["op"], kids)
            site = sites.get(path)
            if site is not None:
                return Param(site["label"], inner, float(site.get("init_value", 1.0)),
                             site.get("granularity", "per-channel"))
            return inner

        out = next(n for n in data["nodes"] if n["op"] == "output")
        root_src = incoming[out["id"]][0]["src"]
        return cls(build(root_src, ()), tbl)


# ------------------------------------------------------------ tree helpers
def _unwrap(node):
    while isinstance(node, Param):
        node = node.child
    return node


def _descend(node, path):
    for i in path:
        node = _unwrap(node).children[i]
    return node


def iter_sites(node, path=()):
    """Yield ``(edge_path, node)`` for every non-Param node, preorder."""
    inner = _unwrap(node)
    yield path, inner
    if isinstance(inner, Op):
        for i, c in enumerate(inner.children):
            yield from iter_sites(c, path + (i,))


def iter_params(node, path=()):
    if isinstance(node, Param):
        yield path, node
    inner = _unwrap(node)
    if isinstance(inner, Op):
        for i, c in enumerate(inner.children):
            yield from iter_params(c, path + (i,))


def replace_at(node, path, fn):
    """Return a copy of the tree where the subtree on edge ``path`` is ``fn(subtree)``.

    ``fn`` receives the subtree including any Param wrapper on that edge.
    """
    if not path:
        return fn(node)
    if isinstance(node, Param):
        return Param(node.label, replace_at(node.child, path, fn), node.init, node.granularity)
    i = path[0]
    kids = list(node.children)
    kids[i] = replace_at(kids[i], path[1:], fn)
    return Op(node.name, tuple(kids))


def strip_params(node):
    inner = _unwrap(node)
    if isinstance(inner, Op):
        return Op(inner.name, tuple(strip_params(c) for c in inner.children))
    return inner


def subtree_op_count(node):
    return sum(1 for _, n in iter_sites(node) if isinstance(n, Op))


def _height(node):
    inner = _unwrap(node)
    if inner is X:
        return 0
    return 1 + max(_height(c) for c in inner.children)


def _shape(node):
    if node is X:
        return "X"
    tag = "U" if node.arity == 1 else "B"
    return f"{tag}({','.join(_shape(c) for c in node.children)})"


# ---------------------------------------------------------- text format
def format_node(node):
    if node is X:
        return "x"
    if isinstance(node, Param):
        return f"param:{node.label}({format_node(node.child)})"
    return f"{node.name}({','.join(format_node(c) for c in node.children)})"


_TOKEN = re.compile(r"\s*(?:(param:)|([a-z_][a-z0-9_]*)|([(),]))")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise GraphSyntaxError("unexpected character", text[pos], pos)
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), start, m.lastindex))
        pos = m.end()
    return tokens


def parse(text, table="pangaea"):
    """Parse a prefix function string such as ``mul(tanh(x),min0(x))``."""
    tbl = get_table(table)
    tokens = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, len(text), 0)

    def expect(tok):
        nonlocal pos
        t = peek()
        if t[0] != tok:
            raise GraphSyntaxError(f"expected {tok!r}", t[0], t[1])
        pos += 1

    def expr():
        nonlocal pos
        tok, at, kind = peek()
        if tok is None:
            raise GraphSyntaxError("unexpected end of input", None, at)
        pos += 1
        if kind == 1:
            lab, lat, lkind = peek()
            if lkind != 2:
                raise GraphSyntaxError("expected parameter label", lab, lat)
            pos += 1
            expect("(")
            child = expr()
            expect(")")
            if isinstance(child, Param):
                raise GraphSyntaxError("an edge carries at most one parameter", lab, lat)
            return Param(lab, child)
        if kind != 2:
            raise GraphSyntaxError("expected operator name or 'x'", tok, at)
        if tok == "x":
            return X
        op = tbl.get(tok)
        if op is None:
            raise UnknownOperator(f"unknown operator for the {tbl.space} table", tok, at)
        expect("(")
        kids = [expr()]
        while peek()[0] == ",":
            pos += 1
            kids.append(expr())
        expect(")")
        if len(kids) != op.arity:
            raise ArityMismatch(f"{tok!r} takes {op.arity} input(s), got {len(kids)}", tok, at)
        return Op(tok, tuple(kids))

    node = expr()
    if pos != len(tokens):
        tok, at, _ = tokens[pos]
        raise GraphSyntaxError("trailing input", tok, at)
    return AfnGraph(node, tbl)
