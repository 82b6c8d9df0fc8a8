"""Empirical Fisher information spectrum of a network at initialization."""

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import SampleCountTooSmall
from .mlp import TrainConfig, init_model, loss_and_grad, predict_logits

# largest parameter count handled by a dense eigendecomposition
DENSE_LIMIT = 2000
CLAMP = -1e-10


@dataclass(frozen=True)
class FimSpectrum:
    eigenvalues: np.ndarray       # non-increasing, >= 0
    samples: int
    trace: float                  # mean squared per-example gradient norm
    n_params: int
    method: str


def _sample_labels(model, X, rng):
    logits = predict_logits(model, X)
    if model.binary:
        p = 0.5 * (1.0 + np.tanh(0.5 * logits[:, 0]))
        return (rng.random(len(X)) < p).astype(int)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random((len(X), 1))
    return np.minimum((p.cumsum(axis=1) < u).sum(axis=1), p.shape[1] - 1)


def per_example_gradients(model, X, y):
    return np.stack([loss_and_grad(model, X[i:i + 1], y[i:i + 1])[1].pack()
                     for i in range(len(X))])


def fim_spectrum(spec, data, cfg=TrainConfig(), samples=256, model=None, method="auto"):
    """Eigenvalues of ``mean(g g^T)`` over per-example gradients ``g``.

    Inputs are drawn from the training split and labels from the model's own
    predictive distribution.  For more than DENSE_LIMIT parameters the
    smaller Gram matrix ``G G^T / n`` is decomposed instead; it has the same
    non-zero spectrum.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_model(spec, rng)
    idx = rng.choice(len(data.X_train), size=samples, replace=samples > len(data.X_train))
    X = data.X_train[idx]
    y = _sample_labels(model, X, rng)
    G = per_example_gradients(model, X, y)
    n, p = G.shape
    if n < p:
        warnings.warn(f"{n} samples cannot give a full-rank estimate of {p} parameters",
                      SampleCountTooSmall, stacklevel=2)
    if method == "auto":
        method = "dense" if p <= DENSE_LIMIT else "gram"
    if method == "dense":
        ev = np.linalg.eigvalsh(G.T @ G / n)
    elif method == "gram":
        ev = np.linalg.eigvalsh(G @ G.T / n)
    else:
        raise ValueError(f"unknown method {method!r}")
    if ev.size and ev.min() < CLAMP * max(1.0, ev.max()):
        raise ArithmeticError(f"eigenvalue {ev.min()} is too negative for a PSD matrix")
    ev = np.clip(ev, 0.0, None)[::-1].copy()
    trace = float(np.mean(np.sum(G * G, axis=1)))
    return FimSpectrum(ev, n, trace, p, method)
