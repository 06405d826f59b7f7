"""Adaptive refinement: a uniform rough pass, then budget reallocated by the rough estimate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BudgetError, ProtocolConfig, SampleMatrix, SharedRandomness, Transcript
from .onebit import OneBitTask, run_onebit


@dataclass(frozen=True)
class SlotAssignment:
    """Which (symbol, replica) task each encoder runs in each of its bit slots.

    ``symbol[e, j]`` is -1 for an idle slot.
    """

    symbol: np.ndarray
    replica: np.ndarray
    counts: np.ndarray

    @property
    def encoders(self) -> int:
        return self.symbol.shape[0]

    @property
    def slots(self) -> int:
        return self.symbol.shape[1]

    def users(self, w: int) -> tuple[np.ndarray, np.ndarray]:
        """Encoder and slot indices running symbol ``w``, in replica order."""
        enc, slot = np.nonzero(self.symbol == w)
        order = np.argsort(self.replica[enc, slot], kind="stable")
        return enc[order], slot[order]

    def check(self) -> None:
        used = (self.symbol >= 0).sum(axis=1)
        if np.any(used > self.slots):
            raise AssertionError("an encoder exceeds its slot budget")
        got = np.bincount(self.symbol[self.symbol >= 0], minlength=self.counts.size)
        if not np.array_equal(got, self.counts):
            raise AssertionError("replica counts differ from the request")
        for e in range(self.encoders):
            row = self.symbol[e][self.symbol[e] >= 0]
            if np.unique(row).size != row.size:
                raise AssertionError(f"encoder {e} holds two replicas of one symbol")


def assign_slots(counts, encoders: int, slots: int) -> SlotAssignment:
    """Lay replicas out symbol by symbol over slot-major positions.

    Position ``q`` is slot ``q // encoders`` of encoder ``q % encoders``, so
    any run of at most ``encoders`` consecutive replicas lands on distinct
    encoders.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts < 0):
        raise ValueError("replica counts must be nonnegative")
    if np.any(counts > encoders):
        raise BudgetError("a symbol requests more replicas than there are encoders")
    total = int(counts.sum())
    if total > encoders * slots:
        raise BudgetError(f"{total} replicas exceed {encoders} encoders x {slots} slots")
    symbol = np.full((encoders, slots), -1, dtype=np.int64)
    replica = np.full((encoders, slots), -1, dtype=np.int64)
    pos = np.arange(total)
    sym = np.repeat(np.arange(counts.size), counts)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    rep = pos - np.repeat(starts, counts)
    symbol[pos % encoders, pos // encoders] = sym
    replica[pos % encoders, pos // encoders] = rep
    return SlotAssignment(symbol, replica, counts)


def allocate_rough(m_half: int, k: int, l: int) -> SlotAssignment:
    """Give every symbol ``floor(m_half * l / k)`` replicas on ``m_half`` encoders.

    Slots beyond ``k`` per encoder would only repeat a symbol, so the rate is
    computed with ``min(l, k)``.
    """
    per_symbol = (m_half * min(l, k)) // k
    if per_symbol == 0:
        raise BudgetError("insufficient budget for rough pass")
    return assign_slots(np.full(k, per_symbol), m_half, l)


def refine_counts(rough, m: int, l: int, k: int) -> np.ndarray:
    """Replicas per symbol for the refined pass: ``floor(m l (p1 + 1/k) / 4) ^ m/2``."""
    rough = np.asarray(rough, dtype=float)
    if rough.size != k:
        raise ValueError(f"rough estimate has {rough.size} entries, expected {k}")
    total = rough.sum()
    if total > 1.0:
        rough = rough / total
    counts = np.floor(m * l * (rough + 1.0 / k) / 4.0 + 1e-9).astype(np.int64)
    return np.minimum(counts, m // 2)


def trim_to_capacity(counts, capacity: int) -> np.ndarray:
    """Drop replicas one at a time from the currently largest requests until they fit."""
    counts = np.array(counts, dtype=np.int64)
    excess = int(counts.sum()) - capacity
    while excess > 0:
        top = np.flatnonzero(counts == counts.max())[:excess]
        counts[top] -= 1
        excess -= top.size
    return counts


def symbol_counts(samples: SampleMatrix) -> np.ndarray:
    """``C[e, w]``: how many of encoder ``e``'s samples equal ``w``."""
    m, k = samples.m, samples.k
    flat = samples.rows + (np.arange(m, dtype=np.int64) * k)[:, None]
    return np.bincount(flat.ravel(), minlength=m * k).reshape(m, k)


def _run_tasks(plan: SlotAssignment, counts: np.ndarray, n: int, stream: SharedRandomness, fallback=None):
    k = plan.counts.size
    bits = np.zeros((plan.encoders, plan.slots), dtype=bool)
    estimate = np.zeros(k) if fallback is None else np.array(fallback, dtype=float)
    for w in range(k):
        if plan.counts[w] == 0:
            continue
        enc, slot = plan.users(w)
        result = run_onebit(OneBitTask(n, counts[enc, w], stream.derive("symbol", w)))
        bits[enc, slot] = result.bits
        estimate[w] = result.estimate
    return estimate, bits


def rough_pass(samples: SampleMatrix, l: int, stream: SharedRandomness) -> tuple[np.ndarray, np.ndarray]:
    """Uniform pass: every symbol estimated by the same number of one-bit replicas.

    Returns the rough estimate and the ``m x l`` bits sent by these encoders.
    """
    plan = allocate_rough(samples.m, samples.k, l)
    return _run_tasks(plan, symbol_counts(samples), samples.n, stream.derive("rough"))


def refined_pass(samples: SampleMatrix, l: int, rough, m_total: int, stream: SharedRandomness):
    """Second pass with replicas proportional to ``rough + 1/k``."""
    k = samples.k
    want = refine_counts(rough, m_total, l, k)
    want = np.minimum(want, samples.m)
    want = trim_to_capacity(want, samples.m * l)
    plan = assign_slots(want, samples.m, l)
    # symbols left without replicas keep their rough value
    return _run_tasks(plan, symbol_counts(samples), samples.n, stream.derive("refine"), fallback=rough)


def run_ar(config: ProtocolConfig, samples: SampleMatrix, stream: SharedRandomness):
    """Run the two-pass protocol; returns the refined estimate and the transcript."""
    m, l = samples.m, config.l
    if m != config.m or samples.k != config.k:
        raise ValueError("sample matrix does not match the configuration")
    first = (m + 1) // 2
    rough, rough_bits = rough_pass(samples.select(0, first), l, stream)
    if m - first > 0:
        estimate, refine_bits = refined_pass(samples.select(first, m), l, rough, m, stream)
    else:
        estimate, refine_bits = rough, np.zeros((0, l), dtype=bool)
    return estimate, Transcript.from_bits(np.vstack([rough_bits, refine_bits]))
