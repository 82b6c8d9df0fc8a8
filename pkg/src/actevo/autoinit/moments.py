"""Mean/variance maps for layers and activations under Gaussian inputs."""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate
from scipy.stats import norm

from ..errors import InsufficientSamples, QuadratureNonConvergence
from ..graph.evaluate import evaluate
from ..graph.graph import AfnGraph, parse

ABS_TOL = 1e-8
REL_TOL = 1e-6
NEG_VAR_TOL = 1e-10
POOL_SAMPLES = 100_000
# integration range in standard-normal units; the density is ~1e-314 at the ends
Z_LIMIT = 38.0


@dataclass(frozen=True)
class MomentPair:
    mu: float
    nu: float

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError(f"variance must be non-negative, got {self.nu}")

    @property
    def second(self):
        """E[x^2]."""
        return self.nu + self.mu * self.mu

    @property
    def finite(self):
        return math.isfinite(self.mu) and math.isfinite(self.nu)

    def as_tuple(self):
        return (self.mu, self.nu)


def _pair(m):
    return m if isinstance(m, MomentPair) else MomentPair(float(m[0]), float(m[1]))


# ------------------------------------------------------------ activations
class Centered:
    """``f(x) - shift``; ``base`` is the uncentered function."""

    def __init__(self, base, shift):
        self.base = base
        self.shift = float(shift)
        self._f = as_function(base)

    def __call__(self, x):
        return self._f(x) - self.shift

    def __repr__(self):
        return f"Centered({self.base!s}, shift={self.shift:.10g})"


def as_function(f):
    """Vectorized callable for an AfnGraph, a function string, or a callable."""
    if isinstance(f, AfnGraph):
        return lambda x: evaluate(f, x)
    if isinstance(f, str):
        g = parse(f)
        return lambda x: evaluate(g, x)
    if callable(f):
        return f
    raise TypeError(f"cannot evaluate {f!r}")


def _hermite(fn, mu, sd, n):
    z, w = hermegauss(n)
    v = np.asarray(fn(mu + sd * z), dtype=np.float64)
    w = w / math.sqrt(2.0 * math.pi)
    return float(np.sum(w * v)), float(np.sum(w * v * v))


def _gaussian_integrals(fn, mu, sd):
    """(E f, E f^2) for x ~ N(mu, sd^2) by adaptive Gauss-Kronrod quadrature."""

    def integrand(z):
        v = float(np.asarray(fn(mu + sd * z), dtype=np.float64))
        return np.array([v, v * v]) * norm.pdf(z)

    cuts = [-Z_LIMIT, -8.0, 8.0, Z_LIMIT]
    kink = -mu / sd
    inner = sorted({-8.0, 0.0, 8.0} | ({kink} if -8.0 < kink < 8.0 else set()))
    pieces = list(zip(inner[:-1], inner[1:])) + [(cuts[0], cuts[1]), (cuts[2], cuts[3])]
    total = np.zeros(2)
    err = 0.0
    ok = True
    with warnings.catch_warnings(), np.errstate(all="ignore"):
        warnings.simplefilter("ignore")
        for a, b in pieces:
            res, e, info = integrate.quad_vec(integrand, a, b, epsabs=ABS_TOL / 8,
                                              epsrel=REL_TOL, limit=400, full_output=True)
            total += res
            err += e
            ok = ok and info.success
    est = total
    bound = ABS_TOL + REL_TOL * np.max(np.abs(est))
    if ok and np.all(np.isfinite(est)) and err <= 10 * bound:
        return float(est[0]), float(est[1]), err
    # adaptivity failed: fall back to high-order Gauss-Hermite, checked by refinement
    with np.errstate(all="ignore"):
        lo = _hermite(fn, mu, sd, 160)
        hi = _hermite(fn, mu, sd, 240)
    diff = max(abs(lo[0] - hi[0]), abs(lo[1] - hi[1]))
    if all(math.isfinite(v) for v in hi) and diff <= 10 * (ABS_TOL + REL_TOL * max(map(abs, hi))):
        return hi[0], hi[1], diff
    raise QuadratureNonConvergence("Gaussian moment integral did not converge",
                                   estimate=(float(est[0]), float(est[1])), error=float(err))


def activation_moments(f, moments=MomentPair(0.0, 1.0)):
    """Moments of f(x) for x ~ N(mu, nu)."""
    m = _pair(moments)
    fn = as_function(f)
    if m.nu == 0:
        v = float(np.asarray(fn(m.mu), dtype=np.float64))
        return MomentPair(v, 0.0)
    mean, second, err = _gaussian_integrals(fn, m.mu, math.sqrt(m.nu))
    var = second - mean * mean
    if var < 0:
        if var < -NEG_VAR_TOL * max(1.0, second):
            raise QuadratureNonConvergence("negative variance from quadrature",
                                           estimate=(mean, var), error=err)
        var = 0.0
    return MomentPair(mean, var)


def center(f):
    """``f - mu_f`` where mu_f is the standard-Gaussian mean of f."""
    if isinstance(f, Centered):
        shift = activation_moments(f).mu
        return Centered(f.base, f.shift + shift)
    return Centered(f, activation_moments(f).mu)


# ------------------------------------------------------------------ layers
def dense_init_scale(fan_in, moments, distribution="normal"):
    """Weight std (normal) or half-width (uniform) giving unit output variance."""
    m = _pair(moments)
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    second = m.second
    if not second > 0 or not math.isfinite(second):
        raise ValueError(f"input second moment must be positive and finite, got {second}")
    std = 1.0 / math.sqrt(fan_in * second)
    if distribution == "normal":
        return std
    if distribution == "uniform":
        return math.sqrt(3.0) * std
    raise ValueError(f"unknown distribution {distribution!r}")


def affine_chain_moments(alpha, beta, L, moments):
    """Moments after L repetitions of y = alpha + beta * x."""
    m = _pair(moments)
    if L < 0:
        raise ValueError("L must be >= 0")
    if beta == 1.0:
        geo = float(L)
    else:
        geo = (1.0 - beta ** L) / (1.0 - beta)
    return MomentPair(beta ** L * m.mu + alpha * geo, beta ** (2 * L) * m.nu)


def max_order_moments(K):
    """Mean and variance of the maximum of K standard normals (1-D quadrature)."""

    def dens(x):
        return K * norm.pdf(x) * norm.cdf(x) ** (K - 1)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m1 = integrate.quad(lambda x: x * dens(x), -Z_LIMIT, Z_LIMIT, epsabs=1e-12, limit=400)[0]
        m2 = integrate.quad(lambda x: x * x * dens(x), -Z_LIMIT, Z_LIMIT, epsabs=1e-12,
                            limit=400)[0]
    return m1, m2 - m1 * m1


def _mc_pool(op, K, m, samples, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(m.mu, math.sqrt(m.nu), size=(samples, K))
    y = x.max(axis=1) if op == "max" else x.mean(axis=1)
    mean = float(y.mean())
    return MomentPair(mean, max(float(np.mean(y * y)) - mean * mean, 0.0))


LAYER_KINDS = ("dense", "activation", "dropout", "pooling", "normalization", "add", "average",
               "subtract", "multiply", "concat", "padding", "shape", "input", "matmul", "reduce")


def layer_moments(kind, params, ins, convention="exact", target_variance=1.0):
    """Output moments of one layer given its input moments.

    ``convention="exact"`` gives the moments of the layer as it actually
    behaves, which for dropout and padding includes a mean-squared term;
    ``convention="zero-mean"`` uses the simpler variance-only formulas, which are
    exact only for zero-mean inputs.  Unknown kinds pass moments through.
    Returns the moments and a note ("" or "fallback identity").
    """
    if convention not in ("exact", "zero-mean"):
        raise ValueError(f"unknown convention {convention!r}")
    ins = [_pair(m) for m in ins]
    p = dict(params or {})
    first = ins[0] if ins else None
    if kind == "input":
        if "mu" in p:
            return MomentPair(float(p["mu"]), float(p["nu"])), ""
        return first, ""
    if kind == "dense":
        std = p.get("weight_std")
        if std is None:
            return MomentPair(0.0, float(target_variance)), ""
        return MomentPair(0.0, p["fan_in"] * std * std * first.second), ""
    if kind == "activation":
        return activation_moments(p["function"], first), ""
    if kind == "dropout":
        r = float(p["rate"])
        if not 0 <= r < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        if p.get("spatial", False):
            if convention == "zero-mean":
                return MomentPair(first.mu * (1 - r), first.nu * (1 - r)), ""
            mean = first.mu * (1 - r)
            return MomentPair(mean, (1 - r) * first.second - mean * mean), ""
        if convention == "zero-mean":
            return MomentPair(first.mu, first.nu / (1 - r)), ""
        return MomentPair(first.mu, first.second / (1 - r) - first.mu ** 2), ""
    if kind == "pooling":
        K = int(p["K"])
        op = p.get("op", "avg")
        if op == "avg":
            return MomentPair(first.mu, first.nu / K), ""
        if op != "max":
            raise ValueError(f"unknown pooling op {op!r}")
        if p.get("method", "mc") == "quadrature":
            m1, v1 = max_order_moments(K)
            sd = math.sqrt(first.nu)
            return MomentPair(first.mu + sd * m1, first.nu * v1), ""
        return _mc_pool(op, K, first, int(p.get("samples", POOL_SAMPLES)), p.get("seed", 0)), ""
    if kind == "normalization":
        return MomentPair(0.0, 1.0), ""
    if kind == "add":
        return MomentPair(sum(m.mu for m in ins), sum(m.nu for m in ins)), ""
    if kind == "average":
        n = len(ins)
        return MomentPair(sum(m.mu for m in ins) / n, sum(m.nu for m in ins) / n ** 2), ""
    if kind == "subtract":
        a, b = ins
        return MomentPair(a.mu - b.mu, a.nu + b.nu), ""
    if kind == "multiply":
        mean = math.prod(m.mu for m in ins)
        return MomentPair(mean, max(math.prod(m.second for m in ins) - mean * mean, 0.0)), ""
    if kind == "concat":
        sizes = p.get("sizes") or [1] * len(ins)
        total = float(sum(sizes))
        mean = sum(c * m.mu for c, m in zip(sizes, ins)) / total
        second = sum(c * m.second for c, m in zip(sizes, ins)) / total
        return MomentPair(mean, max(second - mean * mean, 0.0)), ""
    if kind == "padding":
        z = float(p["z"])
        if not 0 <= z < 1:
            raise ValueError("padding fraction must lie in [0, 1)")
        if convention == "zero-mean":
            return MomentPair(first.mu * (1 - z), first.nu * (1 - z)), ""
        mean = first.mu * (1 - z)
        return MomentPair(mean, (1 - z) * first.second - mean * mean), ""
    if kind == "shape":
        return first, ""
    if kind == "matmul":
        n = int(p["n"])
        a, b = ins
        return MomentPair(n * a.mu * b.mu, n * (a.second * b.second - a.mu ** 2 * b.mu ** 2)), ""
    if kind == "reduce":
        D = int(p["D"])
        if p.get("mode", "mean") == "mean":
            return MomentPair(first.mu, first.nu / D), ""
        return MomentPair(D * first.mu, D * first.nu), ""
    return first, "fallback identity"


# --------------------------------------------------------------- MC oracle
@dataclass(frozen=True)
class McMoments:
    mu: float
    nu: float
    se_mu: float
    se_nu: float
    samples: int

    def agrees(self, other, k=4.0, slack=1e-12):
        o = _pair(other)
        return (abs(o.mu - self.mu) <= k * self.se_mu + slack
                and abs(o.nu - self.nu) <= k * self.se_nu + slack)


def _sample_layer(kind, p, ins, rng, n, target_variance):
    def draw(m, size=None):
        shape = (n,) if size is None else (n, size)
        return rng.normal(m.mu, math.sqrt(m.nu), size=shape)

    first = ins[0] if ins else None
    if kind == "input":
        return draw(MomentPair(float(p["mu"]), float(p["nu"])) if "mu" in p else first)
    if kind == "dense":
        fan_in = int(p["fan_in"])
        std = p.get("weight_std")
        if std is None:
            std = dense_init_scale(fan_in, first) * math.sqrt(target_variance)
        x = draw(first, fan_in)
        w = rng.normal(0.0, std, size=(n, fan_in))
        return np.einsum("ij,ij->i", w, x)
    if kind == "activation":
        with np.errstate(all="ignore"):
            return np.asarray(as_function(p["function"])(draw(first)), dtype=np.float64)
    if kind == "dropout":
        r = float(p["rate"])
        keep = rng.random(n) >= r
        x = draw(first)
        return np.where(keep, x if p.get("spatial", False) else x / (1 - r), 0.0)
    if kind == "pooling":
        x = draw(first, int(p["K"]))
        return x.max(axis=1) if p.get("op", "avg") == "max" else x.mean(axis=1)
    if kind == "normalization":
        x = draw(first)
        return (x - x.mean()) / x.std()
    if kind in ("add", "average", "subtract", "multiply"):
        xs = [draw(m) for m in ins]
        if kind == "add":
            return np.sum(xs, axis=0)
        if kind == "average":
            return np.mean(xs, axis=0)
        if kind == "subtract":
            return xs[0] - xs[1]
        return np.prod(xs, axis=0)
    if kind == "concat":
        sizes = np.asarray(p.get("sizes") or [1] * len(ins), dtype=float)
        which = rng.choice(len(ins), size=n, p=sizes / sizes.sum())
        xs = np.stack([draw(m) for m in ins])
        return xs[which, np.arange(n)]
    if kind == "padding":
        x = draw(first)
        return np.where(rng.random(n) >= float(p["z"]), x, 0.0)
    if kind == "matmul":
        k = int(p["n"])
        return np.einsum("ij,ij->i", draw(ins[0], k), draw(ins[1], k))
    if kind == "reduce":
        x = draw(first, int(p["D"]))
        return x.mean(axis=1) if p.get("mode", "mean") == "mean" else x.sum(axis=1)
    return draw(first)


def mc_moment_oracle(target, moments, samples=1_000_000, seed=0, params=None,
                     target_variance=1.0, chunk=1_000_000):
    """Monte Carlo moments of a function or layer under Gaussian inputs.

    ``target`` is a function (graph, string or callable) or a layer kind
    name with ``params``.  ``moments`` is one pair or a list of pairs (one
    per layer input).  Standard errors use the sample fourth moment.
    """
    if samples < 1000:
        raise InsufficientSamples(f"need at least 1000 samples, got {samples}")
    if isinstance(moments, (list, tuple)) and moments and not isinstance(moments[0], (int, float)):
        ins = [_pair(m) for m in moments]
    else:
        ins = [_pair(moments)]
    if isinstance(target, str) and target in LAYER_KINDS:
        kind, p = target, dict(params or {})
    else:
        kind, p = "activation", {"function": target}
    rng = np.random.default_rng(seed)
    shift = None
    s1 = s2 = s3 = s4 = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        y = _sample_layer(kind, p, ins, rng, n, target_variance)
        if shift is None:
            shift = float(np.mean(y))
        d = y - shift
        d2 = d * d
        s1 += float(d.sum())
        s2 += float(d2.sum())
        s3 += float((d2 * d).sum())
        s4 += float((d2 * d2).sum())
        done += n
    m1, m2, m3, m4 = s1 / done, s2 / done, s3 / done, s4 / done
    mean = shift + m1
    var = max(m2 - m1 * m1, 0.0)
    c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1 ** 4
    se_mu = math.sqrt(var / done)
    se_nu = math.sqrt(max(c4 - var * var, 0.0) / done)
    return McMoments(mean, var, se_mu, se_nu, done)
