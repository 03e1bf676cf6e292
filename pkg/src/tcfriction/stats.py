"""Occupation-level group comparison: Mann-Whitney U, Cliff's delta, BH-FDR.

Samples are oriented so ``x`` is the clinician group and ``y`` the
non-clinician group; U counts x-over-y pairs with ties as one half, so a
positive delta means clinician occupations score higher.
"""

from __future__ import annotations

import math
import statistics
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import groupby

from .errors import DataError, DegenerateSample, EmptyGroup, OutOfRangeP
from .ingest import RoleGroup
from .schema import CategoryCode

EXACT_MAX_N = 20

# Row order of the comparison table.
VARIABLES = (
    "TCI",
    "share_BARGAIN_DECIDE",
    "share_SEARCH_INFO",
    "share_MONITOR_ENFORCE",
    "share_ADAPT_COORDINATE",
    "TCI_sd",
)


@dataclass(frozen=True)
class TestResult:
    variable: str
    u: float
    p: float
    p_fdr: float
    delta: float
    median_x: float
    median_y: float
    method: str

    __test__ = False  # not a pytest class

    def as_dict(self) -> dict:
        return {
            "variable": self.variable, "u": self.u, "p": self.p, "p_fdr": self.p_fdr,
            "delta": self.delta, "median_x": self.median_x, "median_y": self.median_y,
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestResult":
        return cls(**d)


def _check_split(x, y):
    if len(x) < 1 or len(y) < 1:
        raise EmptyGroup(f"both samples need at least one value (got {len(x)} and {len(y)})")
    for v in list(x) + list(y):
        if not math.isfinite(v):
            raise DataError(f"non-finite sample value {v!r}")


def _pair_counts(x, y):
    gt = lt = 0
    for a in x:
        for b in y:
            if a > b:
                gt += 1
            elif a < b:
                lt += 1
    return gt, lt


def u_statistic(x, y) -> float:
    gt, lt = _pair_counts(x, y)
    ties = len(x) * len(y) - gt - lt
    return gt + 0.5 * ties


@lru_cache(maxsize=None)
def _u_counts(n: int, m: int) -> tuple[int, ...]:
    """Number of rank arrangements giving each U in 0..n*m, for tie-free samples."""
    if n == 0 or m == 0:
        return (1,)
    # U(n, m) splits on whether the largest pooled value belongs to x (adds m) or y.
    with_x = _u_counts(n - 1, m)
    with_y = _u_counts(n, m - 1)
    out = [0] * (n * m + 1)
    for u, c in enumerate(with_x):
        out[u + m] += c
    for u, c in enumerate(with_y):
        out[u] += c
    return tuple(out)


def exact_p(u: float, n: int, m: int) -> float:
    counts = _u_counts(n, m)
    total = math.comb(n + m, n)
    k = int(round(u))
    lower = sum(counts[: k + 1])
    upper = sum(counts[k:])
    return min(1.0, 2.0 * min(lower, upper) / total)


def normal_p(u: float, x, y) -> float:
    """Two-sided normal approximation with tie-corrected variance and continuity correction."""
    n, m = len(x), len(y)
    big_n = n + m
    pooled = sorted(list(x) + list(y))
    tie_term = sum(len(list(g)) ** 3 for _, g in groupby(pooled)) - big_n
    var = n * m / 12.0 * ((big_n + 1) - tie_term / (big_n * (big_n - 1)))
    if var <= 0:
        return 1.0
    z = (abs(u - n * m / 2.0) - 0.5) / math.sqrt(var)
    if z <= 0:
        return 1.0
    return min(1.0, max(0.0, math.erfc(z / math.sqrt(2.0))))


def has_ties(x, y) -> bool:
    pooled = list(x) + list(y)
    return len(set(pooled)) < len(pooled)


def mann_whitney_u(x, y, method: str = "auto"):
    """Two-sided Mann-Whitney U test.

    ``method`` is ``"auto"`` (exact when the pooled size is at most 20 and
    there are no ties, normal approximation otherwise), ``"exact"`` or
    ``"approx"``. Forced exact on tied samples falls back to the
    approximation. Returns ``(u, p, method_used)``.
    """
    _check_split(x, y)
    n, m = len(x), len(y)
    u = u_statistic(x, y)
    if len(set(x) | set(y)) == 1:
        warnings.warn(DegenerateSample("all pooled values are identical; p set to 1"))
        return n * m / 2.0, 1.0, "Exact" if method == "exact" else "NormalApprox"
    if method == "auto":
        method = "exact" if n + m <= EXACT_MAX_N and not has_ties(x, y) else "approx"
    if method == "exact" and has_ties(x, y):
        # The tie-free null distribution does not apply; the method column records the fallback.
        method = "approx"
    if method == "exact":
        return u, exact_p(u, n, m), "Exact"
    if method == "approx":
        return u, normal_p(u, x, y), "NormalApprox"
    raise ValueError(f"unknown method {method!r}")


def cliffs_delta(x, y) -> float:
    _check_split(x, y)
    gt, lt = _pair_counts(x, y)
    return (gt - lt) / (len(x) * len(y))


def bh_adjust(pvals) -> list[float]:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    pvals = list(pvals)
    m = len(pvals)
    if m == 0:
        raise OutOfRangeP("no p-values to adjust")
    for p in pvals:
        if not (0.0 <= p <= 1.0):
            raise OutOfRangeP(f"p-value {p!r} outside [0, 1]")
    order = sorted(range(m), key=lambda i: pvals[i])
    adjusted = [0.0] * m
    running = 1.0
    for rank in range(m, 0, -1):
        i = order[rank - 1]
        running = min(running, m / rank * pvals[i])
        adjusted[i] = min(1.0, running)
    return adjusted


def variable_values(metric, variable: str) -> float:
    if variable == "TCI":
        return metric.tci
    if variable == "TCI_sd":
        return metric.tci_sd
    return metric.shares[CategoryCode(variable[len("share_"):])]


def compare_groups(metrics, method: str = "auto") -> list[TestResult]:
    """Clinician vs non-clinician tests for every variable, with joint BH adjustment."""
    clin = [m for m in metrics if m.role_group == RoleGroup.CLINICIAN]
    non = [m for m in metrics if m.role_group == RoleGroup.NON_CLINICIAN]
    if not clin or not non:
        raise EmptyGroup(f"need occupations in both groups (clinician={len(clin)}, non={len(non)})")
    raw = []
    for var in VARIABLES:
        x = [variable_values(m, var) for m in clin]
        y = [variable_values(m, var) for m in non]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSample)
            u, p, used = mann_whitney_u(x, y, method)
        raw.append((var, u, p, cliffs_delta(x, y), statistics.median(x), statistics.median(y), used))
    adjusted = bh_adjust([r[2] for r in raw])
    return [
        TestResult(var, u, p, q, d, mx, my, used)
        for (var, u, p, d, mx, my, used), q in zip(raw, adjusted)
    ]
