"""Rank-sum, normality and equal-variance tests.

Statistic conventions
---------------------
``mann_whitney`` reports ``U = R_a - n_a (n_a + 1) / 2`` for the first
group, where ``R_a`` is its rank sum with midranks for ties. This is the
``W`` printed by R's ``wilcox.test(a, b)``. Two-sided p-values are
``min(1, 2 * min(P(U' <= U), P(U' >= U)))``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special
from scipy.stats import rankdata

from ..errors import DegenerateError, PreconditionError, SampleSizeError
from ._validation import check_real_1d

EXACT_MAX_TOTAL = 12
SHAPIRO_MAX_N = 5000
DEFAULT_SEED = 20250401


class Method(str, enum.Enum):
    MANN_WHITNEY = "MannWhitney"
    SHAPIRO_WILK = "ShapiroWilk"
    LEVENE = "Levene"


@dataclass(frozen=True)
class TestResult:
    method: Method
    statistic: float
    p_value: float
    sizes: tuple
    df: tuple = ()
    notes: str = ""

    __test__ = False  # not a pytest class


# -- Mann-Whitney ---------------------------------------------------------------

@lru_cache(maxsize=256)
def _u_counts(m: int, n: int) -> tuple:
    """Number of rank arrangements giving each U in 0..m*n (no ties)."""
    # counts[i][j] = distribution for i items of group a, j of group b
    table = [[None] * (n + 1) for _ in range(m + 1)]
    for j in range(n + 1):
        table[0][j] = [1]
    for i in range(1, m + 1):
        table[i][0] = [1]
        for j in range(1, n + 1):
            size = i * j + 1
            dist = [0] * size
            # Largest observation is from a (adds j to U) or from b (adds 0).
            for u, c in enumerate(table[i - 1][j]):
                dist[u + j] += c
            for u, c in enumerate(table[i][j - 1]):
                dist[u] += c
            table[i][j] = dist
    return tuple(table[m][n])


def mann_whitney_exact_p(u: float, m: int, n: int) -> float:
    counts = _u_counts(m, n)
    total = math.comb(m + n, m)
    lower = sum(c for k, c in enumerate(counts) if k <= u)
    upper = sum(c for k, c in enumerate(counts) if k >= u)
    return min(1.0, 2 * min(lower, upper) / total)


def mann_whitney_normal_p(u: float, m: int, n: int, tie_sizes=()) -> float:
    """Normal approximation with tie and continuity corrections."""
    N = m + n
    tie_term = sum(t ** 3 - t for t in tie_sizes) / (N * (N - 1)) if N > 1 else 0.0
    var = m * n / 12 * ((N + 1) - tie_term)
    if var <= 0:
        return 1.0
    diff = u - m * n / 2
    z = (diff - 0.5 * np.sign(diff)) / math.sqrt(var)
    return float(min(1.0, 2 * special.ndtr(-abs(z))))


def mann_whitney(group_a: Sequence[float], group_b: Sequence[float], method: str = "auto") -> TestResult:
    """Two-sided Wilcoxon rank-sum / Mann-Whitney test.

    ``method="auto"`` enumerates the exact null distribution when the
    pooled sample has at most 12 values and no ties, and otherwise uses
    the tie- and continuity-corrected normal approximation.
    """
    a = check_real_1d(group_a, "group_a")
    b = check_real_1d(group_b, "group_b")
    m, n = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    u = float(ranks[:m].sum() - m * (m + 1) / 2)
    _, tie_sizes = np.unique(pooled, return_counts=True)
    has_ties = bool((tie_sizes > 1).any())

    if len(tie_sizes) == 1:
        return TestResult(Method.MANN_WHITNEY, u, 1.0, (m, n),
                          notes="degenerate: all pooled values identical")
    if method == "auto":
        method = "exact" if m + n <= EXACT_MAX_TOTAL and not has_ties else "normal"
    if method == "exact":
        if has_ties:
            raise PreconditionError("exact p-values need tie-free samples")
        return TestResult(Method.MANN_WHITNEY, u, mann_whitney_exact_p(u, m, n), (m, n),
                          notes="exact null distribution")
    if method != "normal":
        raise PreconditionError(f"unknown method {method!r}")
    p = mann_whitney_normal_p(u, m, n, [int(t) for t in tie_sizes if t > 1])
    note = "normal approximation, continuity correction"
    if has_ties:
        note += ", tie correction"
    return TestResult(Method.MANN_WHITNEY, u, p, (m, n), notes=note)


# -- Shapiro-Wilk ---------------------------------------------------------------

def _poly(coefs, x):
    """coefs[0] + coefs[1] x + coefs[2] x^2 + ..."""
    out = 0.0
    for c in reversed(coefs):
        out = out * x + c
    return out


_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def shapiro_wilk_coefficients(n: int) -> np.ndarray:
    """Royston's approximation to the Shapiro-Wilk weights, ascending order."""
    if n < 3:
        raise SampleSizeError("Shapiro-Wilk needs n >= 3")
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    m = special.ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    ssq = float(m @ m)
    u = 1 / math.sqrt(n)
    a = m / math.sqrt(ssq)
    an = _poly(_C1, u) + m[-1] / math.sqrt(ssq)
    if n > 5:
        an1 = _poly(_C2, u) + m[-2] / math.sqrt(ssq)
        phi = (ssq - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
        a = m / math.sqrt(phi)
        a[[0, 1, -2, -1]] = [-an, -an1, an1, an]
    else:
        phi = (ssq - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
        a = m / math.sqrt(phi)
        a[[0, -1]] = [-an, an]
    return a


def _shapiro_p(w: float, n: int) -> float:
    if w >= 1.0:
        return 1.0
    if n == 3:
        p = 6 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return min(max(p, 0.0), 1.0)
    y = math.log(1 - w)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return 0.0
        y = -math.log(gamma - y)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    return float(special.ndtr(-(y - mu) / sigma))


def shapiro_wilk(values: Sequence[float], seed: int = DEFAULT_SEED) -> TestResult:
    """Shapiro-Wilk W with Royston's (1995) p-value approximation.

    Samples above 5,000 values are reduced to a seeded random subsample of
    5,000, which is reported in ``notes``.
    """
    x = check_real_1d(values, "values")
    n_total = len(x)
    if n_total < 3:
        raise SampleSizeError(f"Shapiro-Wilk needs n >= 3, got {n_total}")
    notes = ""
    if n_total > SHAPIRO_MAX_N:
        rng = np.random.default_rng(seed)
        x = x[rng.choice(n_total, SHAPIRO_MAX_N, replace=False)]
        notes = f"seeded subsample of {SHAPIRO_MAX_N} from {n_total} (seed {seed})"
    x = np.sort(x)
    n = len(x)
    centred = x - x.mean()
    ssq = float(centred @ centred)
    if ssq == 0:
        raise DegenerateError("all values identical; W undefined")
    a = shapiro_wilk_coefficients(n)
    w = float((a @ x) ** 2 / ssq)
    w = min(w, 1.0)
    return TestResult(Method.SHAPIRO_WILK, w, _shapiro_p(w, n), (n_total,), notes=notes)


# -- Levene / Brown-Forsythe ---------------------------------------------------------

def levene_test(groups: Sequence[Sequence[float]]) -> TestResult:
    """Median-centred Levene test: one-way ANOVA F on ``|x - median(group)|``."""
    if len(groups) < 2:
        raise PreconditionError("Levene's test needs at least two groups")
    arrays = [check_real_1d(g, f"group {i}", min_size=2) for i, g in enumerate(groups)]
    devs = [np.abs(g - np.median(g)) for g in arrays]
    sizes = np.array([len(d) for d in devs])
    N, k = int(sizes.sum()), len(devs)
    group_means = np.array([d.mean() for d in devs])
    grand = float(np.concatenate(devs).mean())
    between = float((sizes * (group_means - grand) ** 2).sum())
    within = float(sum(((d - m) ** 2).sum() for d, m in zip(devs, group_means)))
    df = (k - 1, N - k)
    if within == 0:
        if between == 0:
            raise DegenerateError("all absolute deviations are equal")
        return TestResult(Method.LEVENE, math.inf, 0.0, tuple(sizes.tolist()), df,
                          notes="zero within-group spread")
    f = (between / df[0]) / (within / df[1])
    p = float(special.fdtrc(df[0], df[1], f))
    return TestResult(Method.LEVENE, f, p, tuple(int(s) for s in sizes), df,
                      notes="median-centred (Brown-Forsythe)")
