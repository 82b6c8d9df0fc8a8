"""Output fingerprints used to decide when two graphs are the same function."""

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .evaluate import evaluate

PROBE_SEED = 20200101
PROBE_SIZE = 1000
PROBE_BOUND = 5.0


@lru_cache(maxsize=1)
def probe_inputs():
    """The fixed probe set: N(0, 1) draws clipped to [-5, 5]."""
    rng = np.random.default_rng(PROBE_SEED)
    x = np.clip(rng.standard_normal(PROBE_SIZE), -PROBE_BOUND, PROBE_BOUND)
    x.setflags(write=False)
    return x


def _canonical(values):
    v = np.array(values, dtype="<f8")
    v[np.isnan(v)] = np.nan  # one NaN bit pattern
    v[v == 0.0] = 0.0  # fold -0.0 into +0.0
    return v


@dataclass(frozen=True)
class Fingerprint:
    outputs: np.ndarray
    key: bytes

    def __eq__(self, other):
        return isinstance(other, Fingerprint) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def digest(self):
        return hashlib.sha256(self.key).hexdigest()


def fingerprint(graph):
    """Fingerprint of ``graph`` with every parameter at its initial value."""
    out = _canonical(evaluate(graph, probe_inputs()))
    return Fingerprint(out, out.tobytes())
