"""One-bit estimation of a binomial success probability.

Each of ``m'`` users holds a count ``X_i ~ Bin(n, q)`` and sends a single
bit.  A first batch of users localizes ``q`` by interactive bisection
(majority votes on threshold bits); the remaining users all send
``1{X_i >= theta}`` for a threshold near ``n * q`` and the decoder inverts
the binomial tail at the observed fraction of ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from .core import SharedRandomness

MIN_WIDTH_SAMPLES = 4  # bisection stops once the interval is narrower than 8/n


def binomial_tail(n: int, theta: int, q: float) -> float:
    """``P[Bin(n, q) >= theta]``."""
    if theta <= 0:
        return 1.0
    if theta > n:
        return 0.0
    return float(betainc(theta, n - theta + 1, q))


def invert_binomial_tail(n: int, theta: int, target: float) -> float:
    """Solve ``P[Bin(n, q) >= theta] = target`` for ``q`` in [0, 1].

    Targets outside the attainable range are clamped to the nearest
    endpoint.  For ``theta == 0`` the tail is identically one and 0.0 is
    returned.
    """
    if not 0 <= theta <= n:
        raise ValueError(f"theta={theta} outside [0, {n}]")
    if theta == 0:
        return 0.0
    if target <= 0.0:
        return 0.0
    if target >= 1.0:
        return 1.0
    if theta == n:
        return float(target ** (1.0 / n))
    if theta == 1:
        # 1 - (1 - q)^n, solved in closed form with expm1/log1p for accuracy
        return float(-math.expm1(math.log1p(-target) / n))
    a, b = theta, n - theta + 1
    return float(
        brentq(lambda q: betainc(a, b, q) - target, 0.0, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    )


@dataclass(frozen=True)
class OneBitTask:
    n: int
    counts: np.ndarray
    stream: SharedRandomness

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1:
            raise ValueError("counts must be a 1-d array")
        if counts.size == 0:
            raise ValueError("one-bit estimation needs at least one user")
        if self.n < 1:
            raise ValueError("n must be positive")
        if counts.min() < 0 or counts.max() > self.n:
            raise ValueError(f"counts must lie in [0, {self.n}]")
        object.__setattr__(self, "counts", counts)

    @property
    def m_prime(self) -> int:
        return self.counts.size


@dataclass(frozen=True)
class OneBitResult:
    estimate: float
    bits: np.ndarray
    threshold: int
    interval: tuple
    refine_users: int


def localization_plan(m_prime: int, n: int) -> tuple[int, int]:
    """Number of bisection rounds and users per round.

    Rounds stop once another halving would leave an interval narrower than
    ``4/n``; at most half of the users vote.
    """
    if n < 2 * MIN_WIDTH_SAMPLES:
        return 0, 0
    rounds = min(int(math.floor(math.log2(n / MIN_WIDTH_SAMPLES))), math.ceil(math.log2(n)), m_prime // 2)
    if rounds <= 0:
        return 0, 0
    return rounds, (m_prime // 2) // rounds


def _vote_threshold(n: int, point: float) -> int:
    return min(n, max(1, math.ceil(n * point - 1e-9)))


def run_onebit(task: OneBitTask) -> OneBitResult:
    """Run the protocol; ``bits[i]`` is the single bit sent by user ``i``."""
    n, counts = task.n, task.counts
    m_prime = task.m_prime
    order = task.stream.stream("onebit-users").permutation(m_prime)
    bits = np.zeros(m_prime, dtype=bool)

    rounds, group = localization_plan(m_prime, n)
    lo, hi = 0.0, 1.0
    for r in range(rounds):
        users = order[r * group : (r + 1) * group]
        mid = (lo + hi) / 2
        bits[users] = counts[users] >= _vote_threshold(n, mid)
        # decoder side: majority vote, fed back to the next round's users
        if 2 * int(bits[users].sum()) > users.size:
            lo = mid
        else:
            hi = mid

    refine = order[rounds * group :]
    theta = min(n, max(1, math.ceil(n * lo - 1e-9)))
    bits[refine] = counts[refine] >= theta

    ones = int(bits[refine].sum())
    total = refine.size
    if ones == 0:
        estimate = 0.0 if lo < 1.0 / n else invert_binomial_tail(n, theta, 0.5 / total)
    elif ones == total:
        estimate = 1.0 if hi > 1.0 - 1.0 / n else invert_binomial_tail(n, theta, 1.0 - 0.5 / total)
    else:
        estimate = invert_binomial_tail(n, theta, ones / total)
    return OneBitResult(float(estimate), bits, theta, (lo, hi), total)


def onebit_estimate(task: OneBitTask) -> float:
    """Estimate ``q`` from one bit per user; the result lies in [0, 1]."""
    return run_onebit(task).estimate
