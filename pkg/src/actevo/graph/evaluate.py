"""Value and forward-mode derivative evaluation of activation graphs.

One recursive kernel serves scalars and numpy arrays alike.  Derivatives
are carried as tangents: slot 0 is d/dx, the remaining slots follow the
graph's parameter labels.  Tangents that are identically zero are kept as
``None`` so unparameterized branches cost nothing.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteValue
from .graph import X, Param
from .operators import SATURATION


def _saturate(raw):
    out = np.clip(raw, -SATURATION, SATURATION)
    return np.where(np.isnan(out), 0.0, out)


def _param_values(graph, params):
    values = {}
    for site in graph.params:
        if params is not None and site.label in params:
            values[site.label] = params[site.label]
        else:
            values[site.label] = site.init_value
    return values


def _value(node, x, pv, table):
    if node is X:
        return x
    if isinstance(node, Param):
        return pv[node.label] * _value(node.child, x, pv, table)
    op = table[node.name]
    args = [_value(c, x, pv, table) for c in node.children]
    out = op.fn(*args)
    return _saturate(out) if table.safe else out


def evaluate(graph, x, params=None):
    """Evaluate ``graph`` elementwise on ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(all="ignore"):
        return np.asarray(_value(graph.root, x, _param_values(graph, params), graph.table),
                          dtype=np.float64)


def _scale(d, t):
    return None if t is None else d * t


def _combine(da, ta, db, tb):
    if ta is None and tb is None:
        return None
    if ta is None:
        return db * tb
    if tb is None:
        return da * ta
    return da * ta + db * tb


def _dual(node, x, pv, slots, table):
    if node is X:
        tangents = [None] * (len(slots) + 1)
        tangents[0] = np.ones_like(x)
        return x, tangents
    if isinstance(node, Param):
        cv, ct = _dual(node.child, x, pv, slots, table)
        p = pv[node.label]
        tangents = [_scale(p, t) for t in ct]
        k = slots[node.label] + 1
        tangents[k] = cv if tangents[k] is None else tangents[k] + cv
        return p * cv, tangents
    op = table[node.name]
    if op.arity == 1:
        cv, ct = _dual(node.children[0], x, pv, slots, table)
        raw = op.fn(cv)
        d = op.deriv(cv)
        if table.safe:
            d = np.where(np.abs(raw) <= SATURATION, d, 0.0)
            raw = _saturate(raw)
        return raw, [_scale(d, t) for t in ct]
    (av, at), (bv, bt) = (_dual(c, x, pv, slots, table) for c in node.children)
    raw = op.fn(av, bv)
    da, db = op.deriv(av, bv)
    if op.selector:
        # right-hand derivative at ties: follow the branch that moves the
        # output furthest in the selector's direction as x increases
        tie = av == bv
        ax = at[0] if at[0] is not None else 0.0
        bx = bt[0] if bt[0] is not None else 0.0
        first = (ax >= bx) if op.selector == "max" else (ax <= bx)
        da = np.where(tie, first, da).astype(float)
        db = np.where(tie, ~np.asarray(first, dtype=bool), db).astype(float)
    if table.safe:
        keep = np.abs(raw) <= SATURATION
        da = np.where(keep, da, 0.0)
        db = np.where(keep, db, 0.0)
        raw = _saturate(raw)
    return raw, [_combine(da, ta, db, tb) for ta, tb in zip(at, bt)]


def evaluate_dual(graph, x, params=None):
    """Return ``(value, d_dx, {label: d_dlabel})`` as arrays shaped like ``x``."""
    x = np.asarray(x, dtype=np.float64)
    pv = _param_values(graph, params)
    labels = list(pv)
    slots = {label: i for i, label in enumerate(labels)}
    with np.errstate(all="ignore"):
        value, tangents = _dual(graph.root, x, pv, slots, graph.table)
        value = np.asarray(value, dtype=np.float64)
        shape = np.broadcast(value, x).shape

        def dense(t):
            return np.zeros(shape) if t is None else np.broadcast_to(np.asarray(t, dtype=np.float64), shape)

        d_dx = dense(tangents[0])
        d_dp = {label: dense(tangents[slots[label] + 1]) for label in labels}
    return value, d_dx, d_dp


@dataclass(frozen=True)
class DualResult:
    value: float
    d_dx: float
    d_dparam: dict = field(default_factory=dict)
    nonfinite: bool = False


def eval_scalar(graph, x, params=None):
    """g(x) as a Python float.  Non-finite results (unsafe tables only) are
    returned unchanged with a NonFiniteValue warning."""
    out = float(evaluate(graph, float(x), params))
    if not math.isfinite(out):
        warnings.warn(f"{graph.format()} is non-finite at x={x!r}", NonFiniteValue, stacklevel=2)
    return out


def eval_dual(graph, x, params=None):
    value, d_dx, d_dp = evaluate_dual(graph, float(x), params)
    d_dp = {k: float(v) for k, v in d_dp.items()}
    value, d_dx = float(value), float(d_dx)
    finite = all(math.isfinite(v) for v in (value, d_dx, *d_dp.values()))
    return DualResult(value, d_dx, d_dp, nonfinite=not finite)


# ---------------------------------------------------------------- smoothness
def _near_singular(name, args, margin):
    """True when an operator input lies within ``margin`` of a point where
    the operator is not differentiable (or not defined)."""
    if len(args) == 2:
        a, b = args
        if name in ("max", "min"):
            return abs(a - b) < margin
        if name == "div":
            return abs(b) < margin or abs(b + 1e-7) < margin
        if name == "pow":
            return a < margin
        return False
    (v,) = args
    if name == "sqrt":
        return v < margin
    if name == "logabs":
        return abs(v + 1e-7) < margin
    if name == "arctanh":
        return abs(v) > 1.0 - margin
    return False


def is_smooth_point(graph, x, params=None, margin=1e-4, limit=1e6):
    """Whether finite differences around ``x`` are meaningful for ``graph``.

    Rejects inputs near operator kinks, near singular points, and wherever
    an intermediate value is saturated or exceeds ``limit`` in magnitude.
    """
    pv = _param_values(graph, params)
    table = graph.table
    ok = True

    def walk(node):
        nonlocal ok
        if node is X:
            return float(x)
        if isinstance(node, Param):
            return float(pv[node.label]) * walk(node.child)
        args = [walk(c) for c in node.children]
        op = table[node.name]
        if op.arity == 1 and any(abs(args[0] - k) < margin for k in op.kinks):
            ok = False
        if _near_singular(op.name, args, margin):
            ok = False
        with np.errstate(all="ignore"):
            out = float(op.fn(*args))
        if not math.isfinite(out) or abs(out) > limit:
            ok = False
            out = 0.0
        return out

    walk(graph.root)
    return ok

