"""Small classification datasets with standardized features and a stratified split."""

import csv
import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ClassImbalanceWarning, MalformedCsv

KINDS = ("xor", "two_moons", "spirals", "csv")
# below this many points the whole set is used for both training and validation
SMALL_N = 20


@dataclass(frozen=True)
class Dataset:
    name: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    n_classes: int

    @property
    def n_features(self):
        return self.X_train.shape[1]

    def digest(self):
        h = hashlib.sha256()
        for a in (self.X_train, self.y_train, self.X_val, self.y_val):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _xor(n, noise, rng):
    corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    labels = np.array([0, 1, 1, 0])
    idx = np.arange(n) % 4
    X = corners[idx] + (rng.normal(0.0, noise, size=(n, 2)) if noise > 0 else 0.0)
    return X, labels[idx]


def _two_moons(n, noise, rng):
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, np.pi, n_out)
    t_in = rng.uniform(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    X = np.vstack([outer, inner])
    y = np.r_[np.zeros(n_out, dtype=int), np.ones(n_in, dtype=int)]
    return X + rng.normal(0.0, noise, size=X.shape), y


def _spirals(n, noise, rng):
    n0 = n // 2
    y = np.r_[np.zeros(n0, dtype=int), np.ones(n - n0, dtype=int)]
    t = rng.uniform(0.25, 1.0, n) * 3.0 * np.pi
    angle = t + np.pi * y
    X = np.column_stack([t * np.cos(angle), t * np.sin(angle)]) / (3.0 * np.pi)
    return X + rng.normal(0.0, noise, size=X.shape), y


def load_csv(path):
    """Header row, feature columns, integer label in the last column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedCsv("empty file", 0, None)
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise MalformedCsv("need at least one feature column and a label column", 1, None)
    X = np.empty((len(body), len(header) - 1))
    y = np.empty(len(body), dtype=int)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"expected {len(header)} cells, got {len(row)}", r, None)
        for c, cell in enumerate(row[:-1]):
            try:
                X[r - 2, c] = float(cell)
            except ValueError:
                raise MalformedCsv(f"non-numeric cell {cell!r}", r, header[c]) from None
        try:
            y[r - 2] = int(row[-1])
        except ValueError:
            raise MalformedCsv(f"non-integer label {row[-1]!r}", r, header[-1]) from None
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise MalformedCsv("non-finite cell", int(bad[0]) + 2, header[int(bad[1])])
    return X, y


def _stratified_split(y, val_fraction, rng):
    train, val = [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(val_fraction * idx.size))
        if idx.size >= 2:
            k = min(max(k, 1), idx.size - 1)
        else:
            k = 0
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def make_dataset(kind, n=400, noise=0.1, seed=0, path=None, val_fraction=0.1):
    """Generate or load a dataset, standardize features and split 90/10.

    Sets with fewer than SMALL_N points are used whole for both training
    and validation.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset {kind!r}; choose from {KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "csv":
        if path is None:
            raise ValueError("csv datasets need a path")
        X, y = load_csv(path)
    else:
        if n < 4:
            raise ValueError("n must be >= 4")
        X, y = {"xor": _xor, "two_moons": _two_moons, "spirals": _spirals}[kind](n, noise, rng)
    classes, y = np.unique(y, return_inverse=True)
    counts = np.bincount(y)
    if counts.min() < 0.5 * counts.max():
        warnings.warn(f"class counts {counts.tolist()} are imbalanced", ClassImbalanceWarning,
                      stacklevel=2)
    sd = X.std(axis=0)
    X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if len(y) < SMALL_N:
        return Dataset(kind, X, y, X.copy(), y.copy(), len(classes))
    tr, va = _stratified_split(y, val_fraction, rng)
    return Dataset(kind, X[tr], y[tr], X[va], y[va], len(classes))
