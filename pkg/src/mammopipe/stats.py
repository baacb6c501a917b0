"""Kruskal-Wallis test with Dunn post-hoc comparisons (Bonferroni adjusted)."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "Population",
    "DunnPair",
    "SignificanceEntry",
    "SignificanceReport",
    "midranks",
    "tie_sum",
    "normal_sf",
    "normal_two_sided_p",
    "gammaincc",
    "chi2_sf",
    "kruskal_wallis",
    "dunn_bonferroni",
    "significance_table",
]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


@dataclass(frozen=True)
class Population:
    method: str
    values: tuple[float, ...]

    @classmethod
    def of(cls, method: str, values) -> "Population":
        return cls(method, tuple(float(v) for v in values))


def _as_populations(groups) -> list[Population]:
    out = []
    for k, g in enumerate(groups):
        out.append(g if isinstance(g, Population) else Population.of(f"group{k}", g))
    return out


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    ranks = np.empty(len(values))
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def tie_sum(values) -> float:
    """Sum of t^3 - t over groups of tied values."""
    _, counts = np.unique(np.asarray(values, dtype=np.float64), return_counts=True)
    counts = counts.astype(np.float64)
    return float(np.sum(counts**3 - counts))


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _gammainc_series(a: float, x: float) -> float:
    # regularized lower incomplete gamma P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammaincc_cf(a: float, x: float) -> float:
    # Q(a, x) by the Lentz continued fraction, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gammainc_series(a, x)
    return _gammaincc_cf(a, x)


def chi2_sf(x: float, df: int) -> float:
    return gammaincc(df / 2.0, x / 2.0)


def _pooled(groups: Sequence[Population]):
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    sizes = [len(g.values) for g in groups]
    if min(sizes) == 0:
        empty = [g.method for g in groups if not g.values]
        raise ValueError(f"empty group(s): {empty}")
    pooled = np.concatenate([np.asarray(g.values, dtype=np.float64) for g in groups])
    if len(pooled) < 3:
        raise ValueError("need at least 3 observations in total")
    ranks = midranks(pooled)
    bounds = np.cumsum([0] + sizes)
    mean_ranks = [float(ranks[bounds[k] : bounds[k + 1]].mean()) for k in range(len(groups))]
    return pooled, sizes, mean_ranks


def kruskal_wallis(groups) -> tuple[float, float]:
    """H statistic (tie-corrected) and its chi-square p-value with k-1 dof."""
    groups = _as_populations(groups)
    pooled, sizes, mean_ranks = _pooled(groups)
    n = len(pooled)
    correction = 1.0 - tie_sum(pooled) / (n**3 - n)
    if correction <= 0:
        return 0.0, 1.0
    centre = (n + 1) / 2.0
    h = 12.0 / (n * (n + 1)) * math.fsum(ni * (r - centre) ** 2 for ni, r in zip(sizes, mean_ranks))
    h /= correction
    return h, chi2_sf(h, len(groups) - 1)


@dataclass(frozen=True)
class DunnPair:
    a: str
    b: str
    z: float
    p: float
    p_adjusted: float
    significant: bool


def dunn_bonferroni(groups, alpha: float = 0.05) -> list[DunnPair]:
    """Two-sided Dunn z-tests on mean ranks for every pair, Bonferroni adjusted."""
    groups = _as_populations(groups)
    pooled, sizes, mean_ranks = _pooled(groups)
    n = len(pooled)
    var_base = n * (n + 1) / 12.0 - tie_sum(pooled) / (12.0 * (n - 1))
    k = len(groups)
    m = k * (k - 1) // 2
    out = []
    for i, j in itertools.combinations(range(k), 2):
        se = math.sqrt(max(var_base, 0.0) * (1.0 / sizes[i] + 1.0 / sizes[j]))
        diff = mean_ranks[i] - mean_ranks[j]
        z = diff / se if se > 0 else 0.0
        p = normal_two_sided_p(z)
        p_adj = min(1.0, p * m)
        out.append(DunnPair(groups[i].method, groups[j].method, z, p, p_adj, p_adj < alpha))
    return out


@dataclass
class SignificanceEntry:
    metric: str
    structure: str
    h: float
    p_kw: float
    n: dict[str, int]
    pairs: list[DunnPair] = field(default_factory=list)


@dataclass
class SignificanceReport:
    alpha: float
    methods: list[str]
    entries: list[SignificanceEntry]

    def significant_pairs(self, metric: str, structure: str) -> list[tuple[str, str]]:
        for e in self.entries:
            if e.metric == metric and e.structure == structure:
                return [(p.a, p.b) for p in e.pairs]
        return []


def significance_table(
    data: Mapping[str, Mapping[tuple[str, str], Mapping[str, float]]],
    alpha: float = 0.05,
) -> SignificanceReport:
    """Kruskal-Wallis then Dunn for every (metric, structure).

    ``data[method][(metric, structure)]`` maps image id to value; NaN
    values (undefined metrics) are dropped. Every method must cover the
    same image ids. Pairs are tested only when Kruskal-Wallis rejects at
    ``alpha``, and only significant pairs are kept.
    """
    methods = list(data)
    if len(methods) < 2:
        raise ValueError("need at least two methods to compare")
    keys = list(data[methods[0]])
    for meth in methods[1:]:
        if list(data[meth]) != keys:
            raise ValueError(f"method {meth!r} reports different (metric, structure) keys")
    entries = []
    for key in keys:
        ref_ids = sorted(data[methods[0]][key])
        pops = []
        for meth in methods:
            ids = sorted(data[meth][key])
            if ids != ref_ids:
                raise ValueError(f"method {meth!r}: image ids for {key} are not aligned with {methods[0]!r}")
            vals = [data[meth][key][i] for i in ids]
            pops.append(Population.of(meth, [v for v in vals if not math.isnan(v)]))
        sizes = {p.method: len(p.values) for p in pops}
        if min(sizes.values()) == 0 or sum(sizes.values()) < 3:
            entries.append(SignificanceEntry(key[0], key[1], math.nan, math.nan, sizes))
            continue
        h, p_kw = kruskal_wallis(pops)
        entry = SignificanceEntry(key[0], key[1], h, p_kw, sizes)
        if p_kw < alpha:
            entry.pairs = [d for d in dunn_bonferroni(pops, alpha) if d.significant]
        entries.append(entry)
    return SignificanceReport(alpha, methods, entries)
