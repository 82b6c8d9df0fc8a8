"""Declarative layer graphs and moment propagation to per-layer weight scales."""

import json
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

from ..errors import CyclicGraph, NonFiniteMoments
from ..graph.graph import AfnGraph
from .moments import POOL_SAMPLES, MomentPair, dense_init_scale, layer_moments

WEIGHTED = ("dense",)


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    inputs: tuple = ()
    params: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        p = self.params
        for key in ("fan_in", "K", "n", "D"):
            if key in p and int(p[key]) < 1:
                raise ValueError(f"layer {self.id!r}: {key} must be >= 1")
        if "rate" in p and not 0 <= p["rate"] < 1:
            raise ValueError(f"layer {self.id!r}: rate must lie in [0, 1)")
        if "z" in p and not 0 <= p["z"] < 1:
            raise ValueError(f"layer {self.id!r}: z must lie in [0, 1)")
        if "sizes" in p and any(c <= 0 for c in p["sizes"]):
            raise ValueError(f"layer {self.id!r}: concat sizes must be positive")

    def to_dict(self):
        d = {"id": self.id, "kind": self.kind, "inputs": list(self.inputs)}
        for k, v in self.params.items():
            d[k] = v.format() if isinstance(v, AfnGraph) else v
        return d


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    target_variance: float = 1.0

    def __post_init__(self):
        ids = [layer.id for layer in self.layers]
        if len(ids) != len(set(ids)):
            raise ValueError("layer ids must be unique")
        known = set(ids)
        for layer in self.layers:
            missing = [i for i in layer.inputs if i not in known]
            if missing:
                raise ValueError(f"layer {layer.id!r} reads unknown layers {missing}")
        if self.target_variance <= 0:
            raise ValueError("target variance must be positive")

    @property
    def by_id(self):
        return {layer.id: layer for layer in self.layers}

    def order(self):
        ts = TopologicalSorter({layer.id: layer.inputs for layer in self.layers})
        try:
            return list(ts.static_order())
        except CycleError as exc:
            raise CyclicGraph(f"layer graph has a cycle through {exc.args[1]}") from None

    @classmethod
    def from_dict(cls, data):
        layers = []
        edges = {}
        for src, dst in data.get("edges", []):
            edges.setdefault(dst, []).append(src)
        for raw in data["layers"]:
            raw = dict(raw)
            lid = str(raw.pop("id"))
            kind = raw.pop("kind")
            inputs = tuple(raw.pop("inputs", ())) + tuple(edges.get(lid, ()))
            layers.append(LayerSpec(lid, kind, inputs, raw))
        return cls(tuple(layers), float(data.get("target_variance", 1.0)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_json(self):
        return json.dumps({"target_variance": self.target_variance,
                           "layers": [layer.to_dict() for layer in self.layers]}, indent=2)

    @classmethod
    def chain(cls, kinds, data=(0.0, 1.0), target_variance=1.0):
        """Sequential network: ``kinds`` is a list of (kind, params) pairs."""
        layers = [LayerSpec("input", "input", (), {"mu": data[0], "nu": data[1]})]
        for i, (kind, params) in enumerate(kinds):
            layers.append(LayerSpec(f"{kind}{i}", kind, (layers[-1].id,), dict(params)))
        return cls(tuple(layers), target_variance)


@dataclass(frozen=True)
class LayerPlan:
    id: str
    kind: str
    moments: MomentPair
    input_moments: tuple = ()
    distribution: str = None
    std: float = None
    limit: float = None
    note: str = ""

    def to_dict(self):
        d = {"kind": self.kind, "mu": self.moments.mu, "nu": self.moments.nu}
        if self.std is not None:
            d.update(distribution=self.distribution, std=self.std, limit=self.limit)
        if self.note:
            d["note"] = self.note
        return d


@dataclass(frozen=True)
class InitPlan:
    layers: dict
    order: tuple
    target_variance: float
    seed: int
    pool_samples: int

    def weight_layers(self):
        return [self.layers[i] for i in self.order if self.layers[i].std is not None]

    def to_dict(self):
        return {"target_variance": self.target_variance, "seed": self.seed,
                "pool_samples": self.pool_samples, "order": list(self.order),
                "layers": {i: self.layers[i].to_dict() for i in self.order}}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def table(self):
        """Aligned per-layer moment table."""
        lines = [f"{'layer':<16} {'kind':<14} {'mu':>12} {'nu':>12} {'weight std':>12}  note",
                 "-" * 76]
        for i in self.order:
            lp = self.layers[i]
            std = f"{lp.std:.6g}" if lp.std is not None else ""
            lines.append(f"{i:<16} {lp.kind:<14} {lp.moments.mu:>12.6g} {lp.moments.nu:>12.6g} "
                         f"{std:>12}  {lp.note}")
        return "\n".join(lines) + "\n"


def propagate(net, distribution="normal", seed=0, pool_samples=POOL_SAMPLES, convention="exact"):
    """Visit layers in topological order, recording output moments and
    choosing every dense layer's weight scale so its output has mean 0 and
    variance ``net.target_variance``.  Biases are zero."""
    layers = net.by_id
    order = net.order()
    plans = {}
    tv = net.target_variance
    for lid in order:
        layer = layers[lid]
        ins = tuple(plans[i].moments for i in layer.inputs)
        params = dict(layer.params)
        if layer.kind == "pooling" and params.get("op") == "max":
            params.setdefault("samples", pool_samples)
            params.setdefault("seed", seed)
        std = limit = None
        dist = None
        if layer.kind in WEIGHTED and "weight_std" not in params:
            if len(ins) != 1:
                raise ValueError(f"dense layer {lid!r} needs exactly one input")
            try:
                base = dense_init_scale(int(params["fan_in"]), ins[0])
            except ValueError:
                raise NonFiniteMoments(lid, ins[0].as_tuple()) from None
            std = base * math.sqrt(tv)
            limit = math.sqrt(3.0) * std
            dist = distribution
        try:
            out, note = layer_moments(layer.kind, params, ins, convention, tv)
        except (ValueError, ArithmeticError) as exc:
            if isinstance(exc, NonFiniteMoments):
                raise
            raise NonFiniteMoments(lid, tuple(m.as_tuple() for m in ins)) from exc
        if out is None or not out.finite:
            raise NonFiniteMoments(lid, None if out is None else out.as_tuple())
        if layer.kind in WEIGHTED and "weight_std" in params:
            std = float(params["weight_std"])
            dist = "normal"
        plans[lid] = LayerPlan(lid, layer.kind, out, ins, dist, std, limit, note)
    return InitPlan(plans, tuple(order), tv, seed, pool_samples)
