"""Dense classifier with graph activations, trained by minibatch SGD."""

import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from ..autoinit.moments import Centered, center
from ..autoinit.network import NetworkSpec, propagate
from ..errors import ActevoError
from ..graph.graph import GRANULARITIES, AfnGraph, parse
from ..search import floor_fitness
from .activation import Activation
from .data import make_dataset

INITS = ("autoinit", "glorot-uniform", "he-normal")
STATUSES = ("completed", "failed_nonfinite")
# second moments below this are treated as degenerate when scaling weights
MIN_SECOND = 1e-12


@dataclass(frozen=True)
class MlpSpec:
    """``widths`` runs from input features to outputs, e.g. ``(2, 8, 1)``.

    A single output unit means a binary classifier with a sigmoid output;
    otherwise the output width must equal the class count.  ``granularity``
    overrides the granularity stored on the graph's parameters when set.
    """

    widths: tuple
    activation: object
    granularity: str = None
    init: str = "autoinit"
    center: bool = False
    target_variance: float = 1.0
    bias: bool = True
    table: str = "pangaea"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError("need at least input and output widths, all >= 1")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}; choose from {INITS}")
        if self.granularity is not None and self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.target_variance <= 0:
            raise ValueError("target variance must be positive")

    @property
    def n_outputs(self):
        return self.widths[-1]

    def check(self, data):
        if data.n_features != self.widths[0]:
            raise ValueError(f"input width {self.widths[0]} != {data.n_features} features")
        expected = 1 if data.n_classes == 2 and self.n_outputs == 1 else data.n_classes
        if self.n_outputs != expected:
            raise ValueError(f"output width {self.n_outputs} does not fit {data.n_classes} classes")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.05
    decay_epochs: tuple = ()
    decay_factor: float = 0.2
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if not self.lr > 0 or not self.decay_factor > 0:
            raise ValueError("learning rate and decay factor must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight decay be >= 0")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError("decay epochs must be strictly increasing")

    def lr_at(self, epoch):
        drops = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.lr * self.decay_factor ** drops


@dataclass
class TrainResult:
    status: str
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    final_val_accuracy: float = float("nan")
    final_val_loss: float = float("nan")
    wall_time: float = 0.0
    failure_epoch: int = None
    model: object = field(default=None, repr=False, compare=False)

    def curves(self):
        return {k: list(getattr(self, k))
                for k in ("train_loss", "train_accuracy", "val_loss", "val_accuracy")}

    def to_dict(self):
        d = asdict(self)
        d.pop("model")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


# ------------------------------------------------------------------ model
@dataclass
class Model:
    weights: list
    biases: list
    act_params: list          # one {label: array} per hidden layer
    activation: Activation
    binary: bool

    def arrays(self):
        """Named parameter arrays in a fixed order."""
        out = []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"W{i}", W))
            if b is not None:
                out.append((f"b{i}", b))
        for i, layer in enumerate(self.act_params):
            out.extend((f"act{i}.{label}", layer[label]) for label in sorted(layer))
        return out

    @property
    def n_params(self):
        return sum(a.size for _, a in self.arrays())

    def pack(self):
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def unpack(self, flat):
        """Copy of the model with parameters read from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        m = self.copy()
        pos = 0
        for _, a in m.arrays():
            a[...] = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return m

    def copy(self):
        return Model([W.copy() for W in self.weights],
                     [None if b is None else b.copy() for b in self.biases],
                     [{k: v.copy() for k, v in layer.items()} for layer in self.act_params],
                     self.activation, self.binary)

    def finite(self):
        return all(np.all(np.isfinite(a)) for _, a in self.arrays())


def _activation(spec):
    fn = spec.activation
    if isinstance(fn, str):
        fn = parse(fn, spec.table)
    if spec.center and not isinstance(fn, Centered):
        fn = center(fn)
    return Activation(fn, spec.table)


@lru_cache(maxsize=256)
def _autoinit_stds(graph_json, shift, table, widths, target_variance):
    graph = AfnGraph.from_json(graph_json, table)
    fn = Centered(graph, shift) if shift else graph
    kinds = [("dense", {"fan_in": widths[0]})]
    for width in widths[1:-1]:
        kinds.append(("activation", {"function": fn}))
        kinds.append(("dense", {"fan_in": width}))
    stds = []
    try:
        plan = propagate(NetworkSpec.chain(kinds, target_variance=target_variance))
        moments = [plan.layers[i].input_moments[0] for i in plan.order
                   if plan.layers[i].std is not None]
        for (lp, m), fan_in in zip(zip(plan.weight_layers(), moments), widths[:-1]):
            ok = m.second > MIN_SECOND and math.isfinite(lp.std)
            stds.append(lp.std if ok else 1.0 / math.sqrt(fan_in))
    except (ActevoError, ValueError, ArithmeticError):
        stds = [1.0 / math.sqrt(w) for w in widths[:-1]]
    return tuple(stds)


def init_model(spec, rng):
    """Draw initial weights.  Biases start at zero and activation parameters
    at the values stored on the graph."""
    act = _activation(spec)
    widths = spec.widths
    binary = widths[-1] == 1
    if spec.init == "autoinit":
        stds = _autoinit_stds(act.graph.to_json(), act.shift, spec.table, widths,
                              spec.target_variance)
    weights = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        if spec.init == "glorot-uniform":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        elif spec.init == "he-normal":
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        else:
            W = rng.normal(0.0, stds[i], size=(fan_in, fan_out))
        weights.append(W)
    biases = [np.zeros(w) if spec.bias else None for w in widths[1:]]
    inits = act.initial_values()
    grans = act.granularities()
    act_params = []
    for width in widths[1:-1]:
        layer = {}
        for label, value in inits.items():
            g = spec.granularity or grans[label]
            layer[label] = np.full(() if g == "per-layer" else (width,), float(value))
        act_params.append(layer)
    return Model(weights, biases, act_params, act, binary)


# ------------------------------------------------------- forward/backward
def _loss_from_logits(logits, y, binary):
    """Mean cross-entropy, correct-prediction count and d loss / d logits."""
    n = len(y)
    with np.errstate(all="ignore"):
        if binary:
            z = logits[:, 0]
            loss = np.mean(np.logaddexp(0.0, z) - y * z)
            p = 0.5 * (1.0 + np.tanh(0.5 * z))
            g = ((p - y) / n)[:, None]
            correct = np.sum((z > 0) == (y == 1))
        else:
            shifted = logits - logits.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            loss = -np.mean(logp[np.arange(n), y])
            g = np.exp(logp)
            g[np.arange(n), y] -= 1.0
            g /= n
            correct = np.sum(np.argmax(logits, axis=1) == y)
    return float(loss), int(correct), g


def _reduce(g, shape):
    return g.sum() if shape == () else g.sum(axis=0)


def _run(model, X, y, weight_decay=0.0, grad=True):
    a = X
    cache = []
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        with np.errstate(all="ignore"):
            z = a @ W
            if b is not None:
                z = z + b
        if i == last:
            break
        if grad:
            v, dz, dp = model.activation.dual(z, model.act_params[i])
        else:
            v, dz, dp = model.activation(z, model.act_params[i]), None, None
        cache.append((a, dz, dp))
        a = v
    loss, correct, g = _loss_from_logits(z, y, model.binary)
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(W * W)) for W in model.weights)
    if not grad:
        return loss, correct, None
    gW, gb, gp = [None] * (last + 1), [None] * (last + 1), [None] * last
    with np.errstate(all="ignore"):
        for i in range(last, -1, -1):
            a_in = cache[i][0] if i < last else a
            gW[i] = a_in.T @ g + weight_decay * model.weights[i]
            gb[i] = g.sum(axis=0) if model.biases[i] is not None else None
            if i == 0:
                break
            ga = g @ model.weights[i].T
            _, dz, dp = cache[i - 1]
            params = model.act_params[i - 1]
            gp[i - 1] = {label: _reduce(ga * dp[label], params[label].shape) for label in params}
            g = ga * dz
    grads = Model(gW, gb, gp, model.activation, model.binary)
    return loss, correct, grads


def loss_and_grad(model, X, y, weight_decay=0.0):
    """Mean cross-entropy (plus L2 on weights) and its gradient as a Model."""
    loss, _, grads = _run(model, np.asarray(X, dtype=np.float64), np.asarray(y), weight_decay)
    return loss, grads


def predict_logits(model, X):
    a = np.asarray(X, dtype=np.float64)
    last = len(model.weights) - 1
    with np.errstate(all="ignore"):
        for i, (W, b) in enumerate(zip(model.weights, model.biases)):
            a = a @ W if b is None else a @ W + b
            if i < last:
                a = model.activation(a, model.act_params[i])
    return a


def evaluate_model(model, X, y):
    """(mean cross-entropy, accuracy) without weight decay."""
    loss, correct, _ = _run(model, np.asarray(X, dtype=np.float64), np.asarray(y), grad=False)
    return loss, correct / len(y)


# --------------------------------------------------------------- training
def train(spec, data, cfg=TrainConfig(), model=None):
    """Minibatch SGD with momentum.  Stops with status failed_nonfinite on the
    first non-finite loss, gradient or weight; curves then stop at the last
    completed epoch."""
    spec.check(data)
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_model(spec, rng)
    arrays = [a for _, a in model.arrays()]
    velocity = [np.zeros_like(a) for a in arrays]
    res = TrainResult("completed", model=model)

    def record():
        tl, ta = evaluate_model(model, data.X_train, data.y_train)
        vl, va = evaluate_model(model, data.X_val, data.y_val)
        if not (math.isfinite(tl) and math.isfinite(vl)):
            return False
        res.train_loss.append(tl)
        res.train_accuracy.append(ta)
        res.val_loss.append(vl)
        res.val_accuracy.append(va)
        return True

    n = len(data.y_train)
    failed = False
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, _, grads = _run(model, data.X_train[idx], data.y_train[idx], cfg.weight_decay)
            if not math.isfinite(loss):
                failed = True
                break
            with np.errstate(all="ignore"):
                for a, v, (_, g) in zip(arrays, velocity, grads.arrays()):
                    v *= cfg.momentum
                    v += g
                    a -= lr * (g + cfg.momentum * v if cfg.nesterov else v)
            if not model.finite():
                failed = True
                break
        if failed or not record():
            res.status = "failed_nonfinite"
            res.failure_epoch = epoch
            break
    if cfg.epochs == 0 and not record():
        res.status = "failed_nonfinite"
        res.failure_epoch = 0
    if res.status == "completed":
        res.final_val_loss = res.val_loss[-1]
        res.final_val_accuracy = res.val_accuracy[-1]
    res.wall_time = time.perf_counter() - t0
    return res


def fitness(result, metric="accuracy"):
    floor = floor_fitness(metric)
    if result.status != "completed":
        return floor
    if metric == "accuracy":
        return float(result.final_val_accuracy)
    return -float(result.final_val_loss)


# ------------------------------------------------------------- checkpoint
def save_checkpoint(model, path):
    """Write ``<path>.bin`` (little-endian float64, concatenated) and
    ``<path>.json`` describing the arrays."""
    manifest = {
        "dtype": "<f8",
        "activation": model.activation.graph.to_dict(),
        "shift": model.activation.shift,
        "binary": model.binary,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in model.arrays()],
    }
    flat = model.pack().astype("<f8")
    with open(f"{path}.bin", "wb") as fh:
        fh.write(flat.tobytes())
    with open(f"{path}.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_checkpoint(path, table="pangaea"):
    with open(f"{path}.json") as fh:
        manifest = json.load(fh)
    flat = np.fromfile(f"{path}.bin", dtype="<f8").astype(np.float64)
    graph = AfnGraph.from_json(json.dumps(manifest["activation"]), table)
    act = Activation(Centered(graph, manifest["shift"]) if manifest["shift"] else graph, table)
    weights, biases, act_params = {}, {}, {}
    pos = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = flat[pos:pos + size].reshape(shape).copy()
        pos += size
        name = entry["name"]
        if name.startswith("W"):
            weights[int(name[1:])] = arr
        elif name.startswith("b"):
            biases[int(name[1:])] = arr
        else:
            layer, label = name[3:].split(".", 1)
            act_params.setdefault(int(layer), {})[label] = arr
    if pos != flat.size:
        raise ValueError(f"checkpoint holds {flat.size} values, manifest describes {pos}")
    n = len(weights)
    return Model([weights[i] for i in range(n)], [biases.get(i) for i in range(n)],
                 [act_params.get(i, {}) for i in range(n - 1)], act, manifest["binary"])


# -------------------------------------------------------------- evaluator
class TrainingEvaluator:
    """Fitness of an activation graph: train a fresh network on a fixed
    dataset and score it on the validation split.

    Instances are picklable so searches can fan them out to worker processes.
    Failed trainings return NaN, which the searches record as failures.
    """

    def __init__(self, dataset="two_moons", n=400, noise=0.2, data_seed=0, hidden=(16,),
                 cfg=None, metric="accuracy", init="autoinit", table="pangaea", path=None,
                 granularity=None):
        self.dataset = dataset
        self.n = n
        self.noise = noise
        self.data_seed = data_seed
        self.hidden = tuple(hidden)
        self.cfg = cfg or TrainConfig(epochs=20)
        self.metric = metric
        self.init = init
        self.table = table
        self.path = path
        self.granularity = granularity
        self._data = None

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_data"] = None
        return state

    @property
    def data(self):
        if self._data is None:
            self._data = make_dataset(self.dataset, self.n, self.noise, self.data_seed, self.path)
        return self._data

    def spec_for(self, graph):
        data = self.data
        out = 1 if data.n_classes == 2 else data.n_classes
        return MlpSpec((data.n_features, *self.hidden, out), graph, self.granularity,
                       self.init, table=self.table)

    def __call__(self, graph, seed=0):
        cfg = TrainConfig(**{**asdict(self.cfg), "seed": int(seed) % 2**32})
        result = train(self.spec_for(graph), self.data, cfg)
        if result.status != "completed":
            return float("nan")
        return fitness(result, self.metric)
