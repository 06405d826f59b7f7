"""Predicted minimax rates (polynomial part, constants dropped) and lower-bound curves.

All logarithms are base 2 and floored at one.  ``l`` may be ``math.inf`` for
the unconstrained (centralized) problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

REGIMES = ("central", "high-n", "medium-n", "tight-budget", "low-n", "n-equals-1", "uncovered")


@dataclass(frozen=True)
class RegimePrediction:
    regime: str
    upper_rate: float
    lower_rate: float
    notes: str = ""

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.upper_rate < 0 or self.lower_rate < 0:
            raise ValueError("rates are nonnegative")

    @property
    def matched(self) -> bool:
        return self.regime not in ("uncovered",) and math.isclose(self.upper_rate, self.lower_rate, rel_tol=1e-12)


def _log(x: float) -> float:
    return max(1.0, math.log2(x)) if x > 0 else 1.0


def _pow2(l: float) -> float:
    return math.inf if l == math.inf or l > 1000 else 2.0**l


def central_rate(m: float, n: float, k: float, p: float) -> float:
    """Rate with unlimited communication: ``k^{1-p/2}/(mn)^{p/2}`` below p=2, ``1/(mn)^{p/2}`` above."""
    if p <= 2:
        return k ** (1 - p / 2) / (m * n) ** (p / 2)
    return 1.0 / (m * n) ** (p / 2)


def classify_regime(m: float, n: float, k: float, l: float, p: float) -> RegimePrediction:
    """Label the parameter point with its row of the rate table and the predicted rates.

    Boundaries are the simplified ones (``ml >= k`` and the like) rather than
    the regularity conditions with large constants.  Points that match no
    row are labelled ``uncovered`` with zero rates.
    """
    if min(m, n, k, l) < 1 or p < 1:
        raise ValueError("parameters must be >= 1")
    low_p = p <= 2
    half = p / 2
    expo = max(half, 1.0)
    central = central_rate(m, n, k, p)
    budget = m * l
    two_l = _pow2(l)

    if l == math.inf:
        return RegimePrediction("central", central, central, "no communication constraint")

    if n == 1:
        enough = m * two_l >= k**2 if low_p else m * min(two_l, k ** (2 / p)) >= k**2
        if enough:
            rate = max(k / (m * two_l) ** half, central)
            return RegimePrediction("n-equals-1", rate, rate, "random hashing; floor is the centralized rate")

    if n >= k:
        if budget >= k:
            rate = max(k / (m * n * l) ** half, central)
            note = "communication not binding" if l**expo > k else ""
            return RegimePrediction("high-n", rate, rate, note)
        if (low_p or k <= n) and l >= math.ceil(math.log2(k)):
            rate = max(1.0 / budget ** (p - 1), central)
            return RegimePrediction("tight-budget", rate, rate, "log factors dropped")
        return RegimePrediction("uncovered", 0.0, 0.0, "n >= k with ml < k and l < log k")

    # n < k from here on
    if n >= k / two_l**expo:
        if low_p and budget >= k or not low_p and budget >= n:
            if l**expo > n:
                return RegimePrediction("uncovered", 0.0, 0.0, "l^{p/2 v 1} > n")
            if low_p:
                rate = max(k ** (1 - half) / budget**half, central)
                note = "upper bound carries log^{p/2}(k/n+1)"
            else:
                rate = max(1.0 / (budget**half * n ** (half - 1)), central)
                note = "upper bound carries log^{p/2} k; lower bound divides by log n"
            return RegimePrediction("medium-n", rate, rate, note)
        tight = budget < k if low_p else budget < n
        if tight and l >= math.ceil(math.log2(k)):
            rate = max(1.0 / budget ** (p - 1), central)
            return RegimePrediction("tight-budget", rate, rate, "log factors dropped")
        return RegimePrediction("uncovered", 0.0, 0.0, "medium n outside the budget rows")

    if m * n * two_l >= k**2:
        if low_p:
            rate = k / (m * n * two_l) ** half
            return RegimePrediction("low-n", rate, rate)
        upper = (k / (m * n * two_l)) ** half
        lower = k / (m * n * two_l) ** half
        return RegimePrediction("low-n", upper, lower, "p > 2: upper and lower bounds do not match")
    return RegimePrediction("uncovered", 0.0, 0.0, "low n with m n 2^l < k^2")


def lower_bound(m: float, n: float, k: float, l: float, p: float) -> float:
    """Largest applicable lower-bound branch at the point (constants dropped)."""
    if min(m, n, k, l) < 1 or p < 1:
        raise ValueError("parameters must be >= 1")
    half = p / 2
    two_l = _pow2(l)
    logk, logn = _log(k), _log(n)
    central = central_rate(m, n, k, p)
    best = central
    budget = m * l
    if p <= 2:
        if n >= k * logk and m > (k / l) ** 2:
            best = max(best, k / (m * n * l) ** half)
        if k / two_l <= n < k * logk and m > (k / l) ** 2:
            best = max(best, k ** (1 - half) / (budget * logk) ** half)
        if n < k / two_l and m * n * two_l > k**2:
            best = max(best, k / (m * n * two_l) ** half)
        if budget < k / 2:
            best = max(best, 1.0 / budget ** (p - 1))
    else:
        if n >= k * logk and m > (k / l) ** 2 and l <= k ** (2 / p):
            best = max(best, k / (m * n * l) ** half)
        if k / two_l**half <= n < k * logk and m > (n / logn / l) ** 2 and l <= (n / logn) ** (2 / p):
            best = max(best, 1.0 / (budget**half * n ** (half - 1) * logn))
        if n < k / two_l**half and m * n * two_l > k**2:
            best = max(best, k / (m * n * two_l) ** half)
    if 2 * budget < k:
        best = max(best, 1.0 / budget ** (p - 1))
    return best


def predicted_rate(m: float, n: float, k: float, l: float, p: float) -> float:
    return classify_regime(m, n, k, l, p).upper_rate
