"""Wilson intervals, one-sided Fisher's exact test, and geometric tail Monte Carlo."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lower <= self.upper <= 1.0:
            raise ValueError(f"invalid interval [{self.lower}, {self.upper}]")

    def __contains__(self, p: float) -> bool:
        return self.lower <= p <= self.upper

    def as_percent(self) -> tuple[float, float]:
        return 100.0 * self.lower, 100.0 * self.upper


def wilson(successes: int, n: int, z: float = 1.96) -> Interval:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError(f"successes must be in [0, {n}], got {successes}")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    # exact at the extremes, free of rounding drift
    lower = 0.0 if successes == 0 else max(0.0, center - half)
    upper = 1.0 if successes == n else min(1.0, center + half)
    return Interval(lower, upper)


def fisher_one_sided(a_succ: int, a_fail: int, b_succ: int, b_fail: int) -> float:
    """P(group A shows at least ``a_succ`` successes | margins), alternative A > B.

    Summed exactly over the hypergeometric support with rational arithmetic.
    """
    counts = (a_succ, a_fail, b_succ, b_fail)
    if any(not isinstance(c, int) or c < 0 for c in counts):
        raise ValueError("counts must be non-negative integers")
    if sum(counts) == 0:
        raise ValueError("all-zero table has no margins")
    n_a = a_succ + a_fail
    n_b = b_succ + b_fail
    succ = a_succ + b_succ
    total = n_a + n_b
    denom = math.comb(total, succ)
    hi = min(n_a, succ)
    tail = sum(math.comb(n_a, x) * math.comb(n_b, succ - x) for x in range(a_succ, hi + 1))
    return float(Fraction(tail, denom))


@dataclass(frozen=True)
class TailEstimate:
    expected_max: float
    pct95: float
    std_error: float
    replications: int


def geometric_tail_mc(p_fail: float, n_trials: int, replications: int,
                      seed: int = 0) -> TailEstimate:
    """Distribution of the worst trial's cycle count over ``n_trials`` trials.

    Each trial's count is the number of attempts up to and including the
    first success, so ``P(count > k) = p_fail ** k``.
    """
    if not 0.0 < p_fail < 1.0:
        raise ValueError("p_fail must be in (0, 1)")
    if n_trials < 1 or replications < 1:
        raise ValueError("n_trials and replications must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = rng.geometric(1.0 - p_fail, size=(replications, n_trials))
    maxima = counts.max(axis=1)
    return TailEstimate(
        expected_max=float(maxima.mean()),
        pct95=float(np.percentile(maxima, 95, method="inverted_cdf")),
        std_error=float(maxima.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0,
        replications=replications,
    )


def geometric_tail_exact(p_fail: float, n_trials: int) -> tuple[float, int]:
    """Closed-form mean and 95th percentile of the maximum, for cross-checks."""
    mean = 0.0
    k = 0
    while True:
        term = 1.0 - (1.0 - p_fail ** k) ** n_trials if k else 1.0
        mean += term
        if term < 1e-15:
            break
        k += 1
    k = 1
    while (1.0 - p_fail ** k) ** n_trials < 0.95:
        k += 1
    return mean, k
