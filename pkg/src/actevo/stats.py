"""Two-sample comparison of final fitness lists."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InsufficientSamples

Z95 = 1.959963984540054


@dataclass(frozen=True)
class RunComparison:
    mean_a: float
    mean_b: float
    ci95_a: tuple
    ci95_b: tuple
    t_stat: float
    p_value: float
    n_a: int
    n_b: int
    degenerate: bool = False


def _clean(values, name):
    v = np.asarray([float(x) for x in values], dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise InsufficientSamples(f"{name} needs at least two finite values, got {v.size}")
    return v


def _ci(v):
    half = Z95 * v.std(ddof=1) / math.sqrt(v.size)
    m = float(v.mean())
    return (m - half, m + half)


def compare_runs(a, b):
    """Welch t-test with normal-approximation 95% intervals.

    When both samples have zero variance the t statistic is 0 with p = 1
    for equal means, and +/-inf with p = 0 otherwise (flagged degenerate).
    """
    a = _clean(a, "a")
    b = _clean(b, "b")
    ma, mb = float(a.mean()), float(b.mean())
    degenerate = False
    if a.var() == 0 and b.var() == 0:
        degenerate = True
        if ma == mb:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, ma - mb), 0.0
    else:
        res = stats.ttest_ind(a, b, equal_var=False)
        t, p = float(res.statistic), float(res.pvalue)
        if math.isnan(t):  # identical samples
            t, p = 0.0, 1.0
    return RunComparison(ma, mb, _ci(a), _ci(b), t, p, int(a.size), int(b.size), degenerate)


def format_comparison(rows):
    """Markdown table for ``[(label_a, label_b, RunComparison), ...]``."""
    lines = ["| a | b | mean a | 95% CI a | mean b | 95% CI b | t | p |",
             "|---|---|---|---|---|---|---|---|"]
    for la, lb, r in rows:
        lines.append(f"| {la} | {lb} | {r.mean_a:.4f} | [{r.ci95_a[0]:.4f}, {r.ci95_a[1]:.4f}] | "
                     f"{r.mean_b:.4f} | [{r.ci95_b[0]:.4f}, {r.ci95_b[1]:.4f}] | "
                     f"{r.t_stat:.4g} | {r.p_value:.4g} |")
    return "\n".join(lines) + "\n"
