"""Nonparametric tests for comparing segmentation results.

Paired comparisons use the Wilcoxon signed-rank test, unpaired ones the
Mann-Whitney U test (equivalent to the Wilcoxon rank-sum test). Both are
exact by enumeration at small sample sizes and fall back to a tie-corrected
normal approximation with continuity correction beyond that.

All rank arithmetic is done on doubled ranks so mid-ranks stay integers and
the exact distributions are enumerated without floating-point error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

WILCOXON_EXACT_MAX_N = 20
MWU_EXACT_MAX_N = 16


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str
    n1: int
    n2: int
    exact: bool
    note: str = ""


def _doubled_ranks(values: np.ndarray) -> np.ndarray:
    """Mid-ranks times two, as exact integers.

    A tie group occupying 1-based sorted positions i..j has mid-rank
    (i+j)/2, so its doubled rank is the integer i+j.
    """
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    doubled = np.empty(len(values), dtype=np.int64)
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        doubled[order[i : j + 1]] = (i + 1) + (j + 1)
        i = j + 1
    return doubled


def _two_sided_from_counts(count_le: int, count_ge: int, total: int) -> float:
    return min(1.0, 2.0 * min(count_le, count_ge) / total)


def _normal_sf_two_sided(delta: float, sigma: float) -> float:
    # continuity-corrected |delta|, two-sided
    z = max(abs(delta) - 0.5, 0.0) / sigma
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def wilcoxon_signed_rank(differences) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped, tied magnitudes mid-ranked. The statistic
    is W+, the rank sum of positive differences. Exact enumeration of all
    2^n sign assignments for n <= 20; otherwise normal approximation with
    tie correction and continuity correction.
    """
    d = np.asarray(differences, dtype=np.float64)
    if d.size == 0:
        raise ContractError("empty sample")
    d = d[d != 0]
    n = int(d.size)
    method = "wilcoxon-signed-rank"
    if n == 0:
        return TestResult(0.0, 1.0, method, 0, 0, True, note="all differences zero")
    doubled = _doubled_ranks(np.abs(d))
    w2 = int(doubled[d > 0].sum())  # doubled W+
    statistic = w2 / 2.0
    if n <= WILCOXON_EXACT_MAX_N:
        # polynomial product of (1 + z^r) over the doubled ranks
        max_sum = int(doubled.sum())
        counts = [0] * (max_sum + 1)
        counts[0] = 1
        for r in doubled:
            for s in range(max_sum, r - 1, -1):
                counts[s] += counts[s - r]
        count_le = sum(counts[: w2 + 1])
        count_ge = sum(counts[w2:])
        p = _two_sided_from_counts(count_le, count_ge, 2**n)
        return TestResult(statistic, p, method, n, 0, True)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var -= float((tie_counts**3 - tie_counts).sum()) / 48.0
    p = _normal_sf_two_sided(statistic - mu, math.sqrt(var))
    return TestResult(statistic, p, method, n, 0, False)


def mann_whitney_u(a, b) -> TestResult:
    """Two-sided Mann-Whitney U test (Wilcoxon rank-sum) on two samples.

    The statistic is U1, counted for the first sample. Exact enumeration
    over all C(n1+n2, n1) group labelings for n1+n2 <= 16; otherwise
    tie-corrected normal approximation with continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ContractError("both samples must be nonempty")
    n1, n2 = int(a.size), int(b.size)
    n = n1 + n2
    doubled = _doubled_ranks(np.concatenate([a, b]))
    r1_2 = int(doubled[:n1].sum())  # doubled rank sum of sample a
    u1 = (r1_2 - n1 * (n1 + 1)) / 2.0
    method = "mann-whitney-u"
    if n <= MWU_EXACT_MAX_N:
        # DP over (number chosen, doubled rank sum)
        max_sum = int(doubled.sum())
        table = [[0] * (max_sum + 1) for _ in range(n1 + 1)]
        table[0][0] = 1
        for r in doubled:
            for k in range(n1, 0, -1):
                row, prev = table[k], table[k - 1]
                for s in range(max_sum, r - 1, -1):
                    row[s] += prev[s - r]
        dist = table[n1]
        count_le = sum(dist[: r1_2 + 1])
        count_ge = sum(dist[r1_2:])
        p = _two_sided_from_counts(count_le, count_ge, math.comb(n, n1))
        return TestResult(u1, p, method, n1, n2, True)
    mu = n1 * n2 / 2.0
    _, tie_counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie_term = float((tie_counts**3 - tie_counts).sum()) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return TestResult(u1, 1.0, method, n1, n2, False, note="all pooled values tied")
    p = _normal_sf_two_sided(u1 - mu, math.sqrt(var))
    return TestResult(u1, p, method, n1, n2, False)


def median_iqr(x) -> tuple[float, float, float]:
    """(median, q1, q3) with linear-interpolation quantiles."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("empty sample")
    med, q1, q3 = np.quantile(arr, [0.5, 0.25, 0.75])
    return float(med), float(q1), float(q3)
