"""Activation graphs applied elementwise to layer pre-activations."""

import numpy as np

from ..autoinit.moments import Centered
from ..graph.evaluate import evaluate, evaluate_dual
from ..graph.graph import AfnGraph, parse


class Activation:
    """An activation graph (optionally shifted, as produced by ``center``).

    Parameter values are passed per call as ``{label: array}``; arrays of
    shape ``(width,)`` give one value per unit, 0-d arrays one per layer.
    """

    def __init__(self, fn, table="pangaea"):
        shift = 0.0
        if isinstance(fn, Centered):
            shift = fn.shift
            fn = fn.base
        if isinstance(fn, str):
            fn = parse(fn, table)
        if not isinstance(fn, AfnGraph):
            raise TypeError(f"trainable activations must be graphs, got {fn!r}")
        self.graph = fn
        self.shift = shift

    @property
    def labels(self):
        return self.graph.param_labels

    def initial_values(self):
        return {site.label: site.init_value for site in self.graph.params}

    def granularities(self):
        return {site.label: site.granularity for site in self.graph.params}

    def __call__(self, z, params=None):
        with np.errstate(all="ignore"):
            return evaluate(self.graph, z, params) - self.shift

    def dual(self, z, params=None):
        """(value, d value / dz, {label: d value / d label}), all shaped like ``z``."""
        with np.errstate(all="ignore"):
            value, dz, dp = evaluate_dual(self.graph, z, params)
        return value - self.shift, dz, dp

    def __repr__(self):
        s = self.graph.format()
        return s if not self.shift else f"{s} - {self.shift:.6g}"
