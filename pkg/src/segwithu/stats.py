"""Paired Wilcoxon signed-rank tests, Holm step-down correction and pairwise significance matrices."""

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.stats import norm, rankdata

EXACT_MAX_N = 25
ALPHA = 0.05


def _signed_rank_setup(x, y):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"paired samples differ in length: {x.size} vs {y.size}")
    if x.size == 0:
        raise ValueError("need at least one pair")
    d = x - y
    return d[d != 0]


def exact_null_counts(doubled_ranks):
    """Number of sign assignments giving each value of 2*W+, indexed 0..sum(doubled_ranks)."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    reach = 0
    for r in doubled_ranks:
        r = int(r)
        counts[r:reach + r + 1] = counts[r:reach + r + 1] + counts[:reach + 1].copy()
        reach += r
    return counts


def wilcoxon_signed_rank(x, y, exact_max_n=EXACT_MAX_N):
    """Two-sided p-value of the paired signed-rank test on x - y.

    Zero differences are dropped; when none remain the p-value is 1. Up to
    ``exact_max_n`` non-zero pairs the null distribution is enumerated
    exactly (ties included); above it a normal approximation with tie and
    continuity corrections is used.
    """
    d = _signed_rank_setup(x, y)
    n = d.size
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= exact_max_n:
        # mid-ranks are multiples of 1/2, so doubled ranks are exact integers
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = exact_null_counts(doubled)
        stat = int(round(2 * w_plus))
        total = 2 ** n
        lower = sum(counts[:stat + 1])
        upper = sum(counts[stat:])
        return float(min(1, 2 * min(lower, upper) / total)) if total else 1.0

    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(z)))


def holm_correction(p_values):
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(p_values, dtype=np.float64).reshape(-1)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = (m - np.arange(m)) * p[order]
    adjusted = np.minimum(np.maximum.accumulate(scaled), 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out


@dataclass
class PairwiseMatrix:
    """cells[r, c] = +1 when the column method is significantly better than the row method."""

    methods: list
    metric: str
    higher_is_better: bool
    cells: np.ndarray
    p_raw: np.ndarray = field(default=None, repr=False)
    p_holm: np.ndarray = field(default=None, repr=False)

    @property
    def column_sums(self):
        return self.cells.sum(axis=0)


def _direction(diff):
    """+1 if the first argument of the difference tends to be larger, -1 if smaller, 0 if neither."""
    med = float(np.median(diff))
    if med == 0:
        med = float(np.mean(diff))
    return int(np.sign(med))


def pairwise_matrix(per_case, metric, higher_is_better=True, alpha=ALPHA, exact_max_n=EXACT_MAX_N):
    """Holm-corrected Wilcoxon comparisons between every pair of methods.

    ``per_case`` maps method name to {case_id: score}. Cases where any
    method's score is NaN are dropped from every comparison.
    """
    methods = list(per_case)
    case_sets = {m: set(per_case[m]) for m in methods}
    cases = sorted(case_sets[methods[0]]) if methods else []
    for m in methods:
        if case_sets[m] != set(cases):
            raise ValueError(f"method {m!r} was scored on a different case set")
    table = np.array([[per_case[m][c] for c in cases] for m in methods], dtype=np.float64).reshape(len(methods), -1)
    keep = np.all(np.isfinite(table), axis=0)
    table = table[:, keep]

    M = len(methods)
    pairs = list(combinations(range(M), 2))
    raw = np.array([wilcoxon_signed_rank(table[i], table[j], exact_max_n) for i, j in pairs]
                   if table.shape[1] else [1.0] * len(pairs))
    adjusted = holm_correction(raw)

    cells = np.zeros((M, M), dtype=np.int64)
    p_raw = np.full((M, M), np.nan)
    p_holm = np.full((M, M), np.nan)
    sign = 1 if higher_is_better else -1
    for (r, c), p, q in zip(pairs, raw, adjusted):
        p_raw[r, c] = p_raw[c, r] = p
        p_holm[r, c] = p_holm[c, r] = q
        if q <= alpha:
            col_better = sign * _direction(table[c] - table[r])
            cells[r, c] = col_better
            cells[c, r] = -col_better
    return PairwiseMatrix(methods, metric, higher_is_better, cells, p_raw, p_holm)


def total_column_sums(matrices):
    """Column sums added over several metric blocks that share a method list."""
    if not matrices:
        return np.zeros(0, dtype=np.int64)
    methods = matrices[0].methods
    for mat in matrices:
        if mat.methods != methods:
            raise ValueError("matrices disagree on the method list")
    return np.sum([mat.column_sums for mat in matrices], axis=0)
