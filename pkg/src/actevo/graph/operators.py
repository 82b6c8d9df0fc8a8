"""Operator tables for the two activation-function search spaces.

Every operator is a pair of numpy-compatible callables: the value and its
derivative (a tuple of partials for binary operators).  Both accept 0-d or
n-d float arrays and never raise; with the unsafe CAFE table they may
return inf or nan.

Kinks are points where the derivative is discontinuous.  At a kink the
derivative returned is the right-hand derivative.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special

# Divisor / log offset used by the CAFE table.
CAFE_EPS = 1e-7
# Magnitude at which the safe PANGAEA table saturates.
SATURATION = 1e38

_SELU_SCALE = 1.0507009873554805
_SELU_ALPHA = 1.6732632423543772
_INV_SQRT_PI = 2.0 / np.sqrt(np.pi)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Operator:
    name: str
    arity: int
    fn: object
    deriv: object
    kinks: tuple = ()
    # "max"/"min" for selector binaries whose tie derivative depends on tangents
    selector: str = ""
    tex: str = ""

    def __repr__(self):
        return f"Operator({self.name!r}, arity={self.arity})"


@dataclass(frozen=True)
class OperatorTable:
    space: str
    unary: tuple
    binary: tuple
    safe: bool
    _index: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        index = {}
        for op in self.unary + self.binary:
            if op.name in index or op.name == "x":
                raise ValueError(f"duplicate or reserved operator name {op.name!r}")
            index[op.name] = op
        object.__setattr__(self, "_index", index)

    def __contains__(self, name):
        return name in self._index

    def __getitem__(self, name):
        return self._index[name]

    def get(self, name, default=None):
        return self._index.get(name, default)

    @property
    def names(self):
        return tuple(self._index)

    def of_arity(self, arity):
        return self.unary if arity == 1 else self.binary

    def subset(self, unary=None, binary=None, space=None):
        """Table restricted to the named operators (order preserved)."""
        u = tuple(op for op in self.unary if unary is None or op.name in unary)
        b = tuple(op for op in self.binary if binary is None or op.name in binary)
        return OperatorTable(space or f"{self.space}-subset", u, b, self.safe)


def _f(x):
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- unary ops
def _zero(x):
    return np.zeros_like(_f(x))


def _one(x):
    return np.ones_like(_f(x))


def _identity(x):
    return _f(x) + 0.0


def _neg(x):
    return -_f(x)


def _abs(x):
    return np.abs(x)


def _d_abs(x):
    return np.where(_f(x) >= 0, 1.0, -1.0)


def _square(x):
    return np.square(x)


def _d_square(x):
    return 2.0 * _f(x)


def _cube(x):
    return _f(x) ** 3


def _d_cube(x):
    return 3.0 * np.square(x)


def _sqrt(x):
    return np.sqrt(x)


def _d_sqrt(x):
    return 0.5 / np.sqrt(x)


def _exp(x):
    return np.exp(x)


def _gauss(x):
    return np.exp(-np.square(x))


def _d_gauss(x):
    return -2.0 * _f(x) * np.exp(-np.square(x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return special.expit(x)


def _d_sigmoid(x):
    s = special.expit(x)
    return s * (1.0 - s)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -_f(x))


def _d_log_sigmoid(x):
    return special.expit(-_f(x))


def _log_abs_eps(x):
    return np.log(np.abs(_f(x) + CAFE_EPS))


def _d_log_abs_eps(x):
    return 1.0 / (_f(x) + CAFE_EPS)


def _sinc(x):
    x = _f(x)
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 1.0, np.sin(safe) / safe)


def _d_sinc(x):
    x = _f(x)
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 0.0, (safe * np.cos(safe) - np.sin(safe)) / np.square(safe))


def _d_arctan(x):
    return 1.0 / (1.0 + np.square(x))


def _d_arcsinh(x):
    return 1.0 / np.sqrt(1.0 + np.square(x))


def _d_arctanh(x):
    return 1.0 / (1.0 - np.square(x))


def _d_tanh(x):
    return 1.0 - np.square(np.tanh(x))


def _d_erf(x):
    return _INV_SQRT_PI * np.exp(-np.square(x))


def _d_erfc(x):
    return -_INV_SQRT_PI * np.exp(-np.square(x))


def _relu(x):
    return np.maximum(x, 0.0)


def _d_relu(x):
    return np.where(_f(x) >= 0, 1.0, 0.0)


def _min0(x):
    return np.minimum(x, 0.0)


def _d_min0(x):
    return np.where(_f(x) < 0, 1.0, 0.0)


def _elu(x):
    x = _f(x)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _d_elu(x):
    x = _f(x)
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _selu(x):
    x = _f(x)
    return _SELU_SCALE * np.where(x > 0, x, _SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def _d_selu(x):
    x = _f(x)
    return _SELU_SCALE * np.where(x >= 0, 1.0, _SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def _swish(x):
    return _f(x) * special.expit(x)


def _d_swish(x):
    s = special.expit(x)
    return s + _f(x) * s * (1.0 - s)


def _softsign(x):
    return _f(x) / (1.0 + np.abs(x))


def _d_softsign(x):
    return 1.0 / np.square(1.0 + np.abs(x))


def _d_i0e(x):
    return special.i1e(x) - np.where(_f(x) >= 0, 1.0, -1.0) * special.i0e(x)


def _d_i1e(x):
    x = _f(x)
    i1 = special.i1e(x)
    safe = np.where(x == 0, 1.0, x)
    ratio = np.where(x == 0, 0.5, i1 / safe)
    return special.i0e(x) - np.sign(x) * i1 - ratio


def _hard_sigmoid(x):
    return np.clip(0.2 * _f(x) + 0.5, 0.0, 1.0)


def _d_hard_sigmoid(x):
    x = _f(x)
    return np.where((x >= -2.5) & (x < 2.5), 0.2, 0.0)


def _gelu(x):
    return _f(x) * special.ndtr(x)


def _d_gelu(x):
    x = _f(x)
    return special.ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _d_zero(x):
    return np.zeros_like(_f(x))


def _d_one_slope(x):
    return np.ones_like(_f(x))


def _d_neg(x):
    return -np.ones_like(_f(x))


# --------------------------------------------------------------- binary ops
def _add(a, b):
    return _f(a) + b


def _d_add(a, b):
    one = np.ones(np.broadcast(a, b).shape)
    return one, one


def _sub(a, b):
    return _f(a) - b


def _d_sub(a, b):
    one = np.ones(np.broadcast(a, b).shape)
    return one, -one


def _mul(a, b):
    return _f(a) * b


def _d_mul(a, b):
    shape = np.broadcast(a, b).shape
    return np.broadcast_to(_f(b), shape) + 0.0, np.broadcast_to(_f(a), shape) + 0.0


def _safe_div(a, b):
    a, b = np.broadcast_arrays(_f(a), _f(b))
    out = np.zeros(a.shape)
    np.divide(a, b, out=out, where=b != 0)
    return out


def _d_safe_div(a, b):
    a, b = np.broadcast_arrays(_f(a), _f(b))
    da = np.zeros(a.shape)
    db = np.zeros(a.shape)
    nz = b != 0
    np.divide(1.0, b, out=da, where=nz)
    np.divide(-a, np.square(b), out=db, where=nz)
    return da, db


def _eps_div(a, b):
    return _f(a) / (_f(b) + CAFE_EPS)


def _d_eps_div(a, b):
    den = _f(b) + CAFE_EPS
    return np.broadcast_to(1.0 / den, np.broadcast(a, b).shape) + 0.0, -_f(a) / np.square(den)


def _safe_pow(a, b):
    r = np.power(_f(a), _f(b))
    return np.where(np.isnan(r), 0.0, r)


def _d_safe_pow(a, b):
    a, b = np.broadcast_arrays(_f(a), _f(b))
    r = np.power(a, b)
    defined = ~np.isnan(r)
    da = np.where(defined, b * np.power(a, b - 1.0), 0.0)
    log_a = np.log(np.where(a == 0, 1.0, np.abs(a)))
    db = np.where(defined & (a != 0), r * log_a, 0.0)
    # b * a^(b-1) is nan for a == 0, b == 0 even though the limit is 0
    da = np.where(defined & (a == 0) & (b == 0), 0.0, da)
    return da, db


def _max(a, b):
    return np.maximum(a, b)


def _min(a, b):
    return np.minimum(a, b)


def _d_max(a, b):
    first = _f(a) >= b
    return first.astype(float), (~first).astype(float)


def _d_min(a, b):
    first = _f(a) <= b
    return first.astype(float), (~first).astype(float)


def _unary(name, fn, deriv, kinks=(), tex=""):
    return Operator(name=name, arity=1, fn=fn, deriv=deriv, kinks=tuple(kinks), tex=tex)


def _binary(name, fn, deriv, selector="", tex=""):
    return Operator(name=name, arity=2, fn=fn, deriv=deriv, selector=selector, tex=tex)


ZERO = _unary("zero", _zero, _d_zero, tex="0")
ONE = _unary("one", _one, _d_zero, tex="1")
IDENTITY = _unary("id", _identity, _d_one_slope, tex="x")
NEG = _unary("neg", _neg, _d_neg, tex="-x")
ABS = _unary("abs", _abs, _d_abs, kinks=(0.0,), tex="|x|")
SQUARE = _unary("square", _square, _d_square, tex="x^2")
CUBE = _unary("cube", _cube, _d_cube, tex="x^3")
SQRT = _unary("sqrt", _sqrt, _d_sqrt, tex="\\sqrt{x}")
EXP = _unary("exp", _exp, _exp, tex="e^x")
GAUSS = _unary("gauss", _gauss, _d_gauss, tex="e^{-x^2}")
SOFTPLUS = _unary("softplus", _softplus, _sigmoid, tex="\\log(1+e^x)")
LOG_ABS = _unary("logabs", _log_abs_eps, _d_log_abs_eps, tex="\\log(|x+\\epsilon|)")
SIN = _unary("sin", np.sin, np.cos, tex="\\sin(x)")
COS = _unary("cos", np.cos, lambda x: -np.sin(x), tex="\\cos(x)")
SINH = _unary("sinh", np.sinh, np.cosh, tex="\\sinh(x)")
COSH = _unary("cosh", np.cosh, np.sinh, tex="\\cosh(x)")
ARCSINH = _unary("arcsinh", np.arcsinh, _d_arcsinh, tex="\\mathrm{arcsinh}(x)")
ARCTAN = _unary("arctan", np.arctan, _d_arctan, tex="\\arctan(x)")
ARCTANH = _unary("arctanh", np.arctanh, _d_arctanh, tex="\\mathrm{arctanh}(x)")
TANH = _unary("tanh", np.tanh, _d_tanh, tex="\\tanh(x)")
RELU = _unary("relu", _relu, _d_relu, kinks=(0.0,), tex="\\max\\{x,0\\}")
MIN0 = _unary("min0", _min0, _d_min0, kinks=(0.0,), tex="\\min\\{x,0\\}")
SIGMOID = _unary("sigmoid", _sigmoid, _d_sigmoid, tex="\\sigma(x)")
LOG_SIGMOID = _unary("logsigmoid", _log_sigmoid, _d_log_sigmoid, tex="\\log(\\sigma(x))")
ERF = _unary("erf", special.erf, _d_erf, tex="\\mathrm{erf}(x)")
ERFC = _unary("erfc", special.erfc, _d_erfc, tex="\\mathrm{erfc}(x)")
SINC = _unary("sinc", _sinc, _d_sinc, tex="\\mathrm{sinc}(x)")
ELU = _unary("elu", _elu, _d_elu, tex="\\mathrm{ELU}(x)")
SELU = _unary("selu", _selu, _d_selu, kinks=(0.0,), tex="\\mathrm{SELU}(x)")
SWISH = _unary("swish", _swish, _d_swish, tex="\\mathrm{Swish}(x)")
SOFTSIGN = _unary("softsign", _softsign, _d_softsign, tex="\\mathrm{Softsign}(x)")
BESSEL_I0E = _unary("i0e", special.i0e, _d_i0e, kinks=(0.0,), tex="\\mathrm{bessel\\_i0e}(x)")
BESSEL_I1E = _unary("i1e", special.i1e, _d_i1e, tex="\\mathrm{bessel\\_i1e}(x)")
HARD_SIGMOID = _unary("hardsigmoid", _hard_sigmoid, _d_hard_sigmoid, kinks=(-2.5, 2.5),
                      tex="\\mathrm{HardSigmoid}(x)")
GELU = _unary("gelu", _gelu, _d_gelu, tex="\\mathrm{GELU}(x)")

ADD = _binary("add", _add, _d_add, tex="x_1 + x_2")
SUB = _binary("sub", _sub, _d_sub, tex="x_1 - x_2")
MUL = _binary("mul", _mul, _d_mul, tex="x_1 \\cdot x_2")
SAFE_DIV = _binary("div", _safe_div, _d_safe_div, tex="x_1 / x_2")
EPS_DIV = _binary("div", _eps_div, _d_eps_div, tex="x_1 / (x_2 + \\epsilon)")
POW = _binary("pow", _safe_pow, _d_safe_pow, tex="x_1^{x_2}")
MAX = _binary("max", _max, _d_max, selector="max", tex="\\max\\{x_1, x_2\\}")
MIN = _binary("min", _min, _d_min, selector="min", tex="\\min\\{x_1, x_2\\}")


def cafe_table(arctanh=False):
    """The 24-unary / 6-binary CAFE table.

    arctan is the default unary; ``arctanh=True`` swaps arctanh in for
    it.
    """
    unary = (ZERO, ONE, IDENTITY, NEG, ABS, SQUARE, CUBE, SQRT, EXP, GAUSS, SOFTPLUS, LOG_ABS,
             SIN, SINH, ARCSINH, COS, COSH, TANH, ARCTANH if arctanh else ARCTAN, RELU, MIN0,
             SIGMOID, ERF, SINC)
    binary = (ADD, SUB, MUL, EPS_DIV, MAX, MIN)
    return OperatorTable("CAFE", unary, binary, safe=False)


def pangaea_table():
    """Reconstructed 27-unary / 7-binary PANGAEA table.

    Total on the reals: division returns 0 for a zero divisor, negative
    bases with non-integer exponents return 0, and every output is
    saturated to +/-SATURATION by the evaluator.  No periodic operators.
    """
    unary = (ZERO, ONE, IDENTITY, NEG, ABS, SQUARE, CUBE, EXP, GAUSS, SIGMOID, GELU, TANH,
             ERF, ERFC, ARCTAN, ARCSINH, SINH, SOFTPLUS, SOFTSIGN, RELU, MIN0, ELU, SELU, SWISH,
             BESSEL_I0E, BESSEL_I1E, HARD_SIGMOID)
    binary = (ADD, SUB, MUL, SAFE_DIV, POW, MAX, MIN)
    return OperatorTable("PANGAEA", unary, binary, safe=True)


CAFE = cafe_table()
PANGAEA = pangaea_table()

TABLES = {"cafe": CAFE, "pangaea": PANGAEA}


def get_table(name):
    if isinstance(name, OperatorTable):
        return name
    try:
        return TABLES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown operator table {name!r}; choose from {sorted(TABLES)}") from None
