"""Cross-seed statistics: sample aggregates with t-based confidence
intervals, the Welch unequal-variance test with Hedges-g effect sizes,
Benjamini-Hochberg step-up adjustment, and non-dominated front
extraction for fidelity/complexity scatter data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats


class StatsError(ValueError):
    """Invalid sample or argument."""


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    median: float
    best: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int
    degenerate: bool = False


def aggregate(sample, best: str = "max") -> Aggregate:
    """Mean, sample std (n-1), median, best, standard error, and a
    t-based 95% confidence interval.

    `best` selects the direction: "max" for fidelity-like metrics,
    "min" for complexity metrics.  A single observation collapses the
    interval and is flagged degenerate.
    """
    x = np.asarray(list(sample), dtype=float)
    if x.size < 1:
        raise StatsError("aggregate requires at least one observation")
    if best not in ("max", "min"):
        raise StatsError(f"best must be 'max' or 'min', got {best!r}")
    n = x.size
    mean = float(np.mean(x))
    if n == 1:
        return Aggregate(mean=mean, std=0.0, median=mean, best=mean, stderr=0.0,
                         ci_low=mean, ci_high=mean, n=1, degenerate=True)
    std = float(np.std(x, ddof=1))
    stderr = std / math.sqrt(n)
    half = float(sstats.t.ppf(0.975, n - 1)) * stderr
    return Aggregate(
        mean=mean, std=std, median=float(np.median(x)),
        best=float(np.max(x) if best == "max" else np.min(x)),
        stderr=stderr, ci_low=mean - half, ci_high=mean + half, n=n,
    )


@dataclass(frozen=True)
class WelchResult:
    delta_mean: float
    ci_low: float
    ci_high: float
    hedges_g: float
    p: float
    t: float
    df: float
    degenerate: bool = False


def welch_test(a, b) -> WelchResult:
    """Two-sided Welch test for a difference in means, a - b.

    Returns the mean difference, its t-based 95% confidence interval
    with Welch-Satterthwaite degrees of freedom, the two-sided p-value,
    and the bias-corrected Hedges g (pooled-SD Cohen's d times
    1 - 3 / (4 (n_a + n_b) - 9)).

    Degenerate inputs: two constant, equal samples give p = 1, g = 0
    and a collapsed interval; two constant, unequal samples give the
    p -> 0 limit, flagged degenerate.
    """
    a = np.asarray(list(a), dtype=float)
    b = np.asarray(list(b), dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise StatsError("welch_test requires n >= 2 in each sample")
    delta = float(np.mean(a) - np.mean(b))
    va = float(np.var(a, ddof=1))
    vb = float(np.var(b, ddof=1))
    correction = 1.0 - 3.0 / (4.0 * (na + nb) - 9.0)

    if va == 0.0 and vb == 0.0:
        if delta == 0.0:
            return WelchResult(delta_mean=0.0, ci_low=0.0, ci_high=0.0,
                               hedges_g=0.0, p=1.0, t=0.0, df=float("nan"),
                               degenerate=True)
        g = math.copysign(math.inf, delta)
        return WelchResult(delta_mean=delta, ci_low=delta, ci_high=delta,
                           hedges_g=g, p=0.0, t=math.copysign(math.inf, delta),
                           df=float("nan"), degenerate=True)

    se2 = va / na + vb / nb
    se = math.sqrt(se2)
    t = delta / se
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = float(2.0 * sstats.t.sf(abs(t), df))
    half = float(sstats.t.ppf(0.975, df)) * se
    pooled = math.sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2))
    g = (delta / pooled) * correction if pooled > 0 else math.copysign(math.inf, delta)
    return WelchResult(delta_mean=delta, ci_low=delta - half, ci_high=delta + half,
                       hedges_g=g, p=p, t=t, df=df)


def bh_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values, in the input order.

    q_(i) = min_{j >= i} p_(j) * m / j over the sorted p-values, clipped
    to 1; elementwise q >= p and sorted q is monotone in sorted p.
    """
    p = np.asarray(list(pvalues), dtype=float)
    if p.size == 0:
        return p
    if np.any((p < 0) | (p > 1)):
        raise StatsError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    q_sorted = np.minimum(q_sorted, 1.0)
    q = np.empty_like(p)
    q[order] = q_sorted
    return q


def nondominated_front(points) -> list:
    """Indices of the non-dominated points under (fidelity up,
    complexity down), sorted by complexity.

    `points` is a sequence of (fidelity, complexity) pairs.  A point is
    dominated when another has fidelity >= and complexity <= with at
    least one strict; exact ties on both coordinates keep the earliest
    index only.
    """
    pts = [(float(f), float(c)) for f, c in points]
    for f, c in pts:
        if not (math.isfinite(f) and math.isfinite(c)):
            raise StatsError("points must be finite")
    if not pts:
        return []
    order = sorted(range(len(pts)), key=lambda i: (pts[i][1], -pts[i][0], i))
    front = []
    best_f = -math.inf
    for i in order:
        f, c = pts[i]
        if f > best_f:
            front.append(i)
            best_f = f
    return front


def dominated_mask(points) -> np.ndarray:
    """Boolean mask: True where a point is outside the non-dominated front."""
    pts = list(points)
    mask = np.ones(len(pts), dtype=bool)
    for i in nondominated_front(pts):
        mask[i] = False
    return mask
