"""Evolutionary activation-function search with analytic initialization."""

from .graph import AfnGraph, eval_dual, eval_scalar, fingerprint, parse

__version__ = "0.1.0"
