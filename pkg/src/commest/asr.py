"""Adaptive successive refinement over nested block partitions of the alphabet."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .ar import rough_pass
from .core import BudgetError, ProtocolConfig, SampleMatrix, SharedRandomness, Transcript, bits_to_int, int_to_bits


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous blocks of at most ``2**l0 - 1`` symbols covering ``[0, k)``."""

    k: int
    l0: int

    def __post_init__(self):
        if self.l0 < 1:
            raise ValueError("frame width l0 must be >= 1")
        if self.k < 1:
            raise ValueError("alphabet size must be >= 1")

    @property
    def size(self) -> int:
        return 2**self.l0 - 1

    @property
    def t(self) -> int:
        return -(-self.k // self.size)

    @property
    def blocks(self) -> list[range]:
        return [range(s * self.size, min((s + 1) * self.size, self.k)) for s in range(self.t)]

    @property
    def block_of(self) -> np.ndarray:
        return np.arange(self.k) // self.size

    @property
    def offset_in_block(self) -> np.ndarray:
        return np.arange(self.k) % self.size

    @property
    def block_sizes(self) -> np.ndarray:
        return np.array([len(b) for b in self.blocks])


def block_partition(k: int, l0: int) -> BlockPartition:
    return BlockPartition(k, l0)


@dataclass(frozen=True)
class FramePlan:
    """Allocation of the ``m' * n0`` frames of ``m'`` encoders to blocks.

    Frame position ``q`` is frame ``q // m'`` of encoder ``q % m'``; block
    ``s`` owns the consecutive positions ``starts[s] : starts[s] + quota[s]``.
    """

    encoders: int
    n0: int
    quota: np.ndarray
    cap: np.ndarray

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.quota)[:-1])).astype(np.int64)

    def positions(self, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Encoder, frame index and part index of every frame of block ``s``."""
        q = self.starts[s] + np.arange(self.quota[s])
        part = (q - self.starts[s]) // self.encoders
        return q % self.encoders, q // self.encoders, part

    def per_encoder(self) -> np.ndarray:
        """``F[e, s]``: frames encoder ``e`` spends on block ``s``."""
        table = np.zeros((self.encoders, self.quota.size), dtype=np.int64)
        for s in range(self.quota.size):
            enc, _, _ = self.positions(s)
            np.add.at(table[:, s], enc, 1)
        return table

    def check(self) -> None:
        table = self.per_encoder()
        if np.any(table > self.cap[None, :]):
            raise AssertionError("an encoder exceeds its per-block frame cap")
        if np.any(table.sum(axis=1) > self.n0):
            raise AssertionError("an encoder exceeds its frame budget")


def plan_frames(encoders: int, n0: int, ratios) -> FramePlan:
    ratios = np.asarray(ratios, dtype=float)
    quota = np.floor(encoders * n0 * ratios + 1e-9).astype(np.int64)
    cap = np.ceil(n0 * ratios - 1e-9).astype(np.int64)
    quota = np.minimum(quota, encoders * cap)
    return FramePlan(encoders, n0, quota, cap)


@dataclass(frozen=True)
class SubResult:
    """Output of one refinement step.

    ``conditional[w]`` is the within-block estimate for the block holding
    ``w``; ``nonempty[s]`` counts the frames of block ``s`` that carried a
    sample.
    """

    estimate: np.ndarray
    bits: np.ndarray
    block_estimate: np.ndarray
    conditional: np.ndarray
    nonempty: np.ndarray
    plan: FramePlan
    partition: BlockPartition


def asr_sub(
    samples: SampleMatrix,
    partition: BlockPartition,
    block_estimate,
    l: int,
    uniform_alloc: bool = False,
    stream: SharedRandomness | None = None,
) -> SubResult:
    """Refine a block-level estimate into a symbol-level one.

    Every encoder splits its ``l`` bits into ``l0``-bit frames; frames are
    allotted to blocks in proportion to ``block_estimate`` (or uniformly
    with ``uniform_alloc``), each frame carrying the in-block index (plus one)
    of the first sample of its part that falls in the block, or 0.
    """
    l0, t = partition.l0, partition.t
    block_estimate = np.asarray(block_estimate, dtype=float)
    if l0 > l:
        raise ValueError(f"frame width l0={l0} exceeds the message length l={l}")
    if block_estimate.size != t:
        raise ValueError(f"block estimate has {block_estimate.size} entries, partition has {t} blocks")
    if samples.k != partition.k:
        raise ValueError("samples and partition disagree on the alphabet size")
    m_prime, n = samples.m, samples.n

    if uniform_alloc:
        ratios = np.full(t, 1.0 / t)
    else:
        total = block_estimate.sum()
        ratios = block_estimate / total if total > 1.0 else block_estimate
    n0 = min(l // l0, n)
    plan = plan_frames(m_prime, n0, ratios)

    block_of = partition.block_of[samples.rows]
    offset = partition.offset_in_block[samples.rows]
    frames = np.zeros((m_prime, n0), dtype=np.int64)
    for s in range(t):
        if plan.quota[s] == 0:
            continue
        enc, frame, part = plan.positions(s)
        width = n // int(plan.cap[s])
        cols = part[:, None] * width + np.arange(width)
        hit = block_of[enc[:, None], cols] == s
        found = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        value = offset[enc, cols[np.arange(enc.size), first]] + 1
        frames[enc, frame] = np.where(found, value, 0)

    bits = np.zeros((m_prime, l), dtype=bool)
    if n0:
        bits[:, : n0 * l0] = int_to_bits(frames, l0).reshape(m_prime, n0 * l0)

    # decoder: reads frames back from the bits using the shared plan
    received = bits_to_int(bits[:, : n0 * l0].reshape(m_prime, n0, l0)) if n0 else frames
    sizes = partition.block_sizes
    conditional = np.zeros(partition.k)
    nonempty = np.zeros(t, dtype=np.int64)
    for s, block in enumerate(partition.blocks):
        if plan.quota[s]:
            enc, frame, _ = plan.positions(s)
            got = received[enc, frame]
            got = got[got > 0] - 1
        else:
            got = np.zeros(0, dtype=np.int64)
        nonempty[s] = got.size
        if got.size:
            conditional[block.start : block.stop] = np.bincount(got, minlength=sizes[s]) / got.size
        else:
            conditional[block.start : block.stop] = 1.0 / sizes[s]
    estimate = block_estimate[partition.block_of] * conditional
    return SubResult(estimate, bits, block_estimate, conditional, nonempty, plan, partition)


def reduction_chain(k: int, n: int, l: int) -> list[int]:
    """``[k_1, ..., k_{a+1}]`` with ``k_{u+1} = ceil(k_u / (2^l - 1))``, stopping at ``<= n (2^l - 1)``."""
    if l < 2:
        raise ValueError("the reduction chain needs l >= 2 to shrink the alphabet")
    size = 2**l - 1
    chain = [k]
    while chain[-1] > n * size:
        chain.append(-(-chain[-1] // size))
    return chain


def asr_case(k: int, n: int, l: int) -> int:
    """1: ``k <= n``; 2: ``n < k <= (2^l - 1) n``; 3: larger alphabets."""
    if k <= n:
        return 1
    if k <= (2**l - 1) * n:
        return 2
    return 3


def _zero_bits(m: int, l: int) -> np.ndarray:
    return np.zeros((m, l), dtype=bool)


def _estimate(samples: SampleMatrix, l: int, stream: SharedRandomness, uniform_alloc: bool, trace):
    """Recursive body of the protocol; returns the estimate and an ``m x l`` bit matrix."""
    m, n, k = samples.m, samples.n, samples.k
    case = asr_case(k, n, l)
    if case == 1:
        return rough_pass(samples, l, stream.derive("case1"))

    first = (m + 1) // 2
    head, tail = samples.select(0, first), samples.select(first, m)
    if case == 2:
        l0 = math.ceil(math.log2(k / n + 1))
        part = block_partition(k, l0)
        block_est, head_bits = _estimate(
            head.relabel(part.block_of, part.t), l, stream.derive("blocks"), uniform_alloc, trace
        )
        if tail.m == 0:
            raise BudgetError("insufficient encoders for recursion depth")
        sub = asr_sub(tail, part, block_est, l, uniform_alloc, stream.derive("sub"))
        if trace is not None:
            trace.append(sub)
        return sub.estimate, np.vstack([head_bits, sub.bits])

    chain = reduction_chain(k, n, l)
    a = len(chain) - 1
    size = 2**l - 1
    parts = [m // 2 ** (u + 1) for u in range(1, a + 1)]
    if min(parts) == 0:
        raise BudgetError("insufficient encoders for recursion depth")
    top = head.relabel(np.arange(k) // size**a, chain[a])
    estimate, head_bits = _estimate(top, l, stream.derive("top"), uniform_alloc, trace)
    starts = np.concatenate(([0], np.cumsum(parts)))
    tail_bits = _zero_bits(tail.m, l)
    for u in range(a, 0, -1):
        # level u refines the k_{u+1}-dim estimate into a k_u-dim one
        rows = tail.select(int(starts[u - 1]), int(starts[u]))
        level = rows.relabel(np.arange(k) // size ** (u - 1), chain[u - 1])
        sub = asr_sub(level, block_partition(chain[u - 1], l), estimate, l, uniform_alloc, stream.derive("level", u))
        if trace is not None:
            trace.append(sub)
        tail_bits[starts[u - 1] : starts[u]] = sub.bits
        estimate = sub.estimate
    return estimate, np.vstack([head_bits, tail_bits])


def run_asr(
    config: ProtocolConfig,
    samples: SampleMatrix,
    stream: SharedRandomness,
    uniform_alloc: bool = False,
    trace: list | None = None,
):
    """Run the full protocol; dispatches on how ``k`` compares with ``n`` and ``2^l``.

    With ``uniform_alloc`` every refinement step allots frames uniformly, so
    no encoder depends on earlier messages.  When ``trace`` is a list, every
    refinement step's :class:`SubResult` is appended to it, coarsest first.
    """
    if samples.m != config.m or samples.k != config.k:
        raise ValueError("sample matrix does not match the configuration")
    case = asr_case(config.k, config.n, config.l)
    if case == 2 and config.l < 2 or case == 3 and config.l < 4:
        warnings.warn(f"ASR case {case} is analysed for larger l than {config.l}", stacklevel=2)
    estimate, bits = _estimate(samples, config.l, stream, uniform_alloc, trace)
    return estimate, Transcript.from_bits(bits)


def one_step_error(truth, block_estimate, conditional, block_of, p: float, tv: bool = False) -> tuple[float, float]:
    """Both sides of the per-realization error bound of one refinement step.

    ``truth`` is the distribution on the step's alphabet, ``block_of`` maps
    symbols to blocks and ``conditional`` holds the within-block estimates.
    Returns ``(lhs, rhs)`` where ``lhs = ||p_hat - p||_p^p`` and

        rhs = 2^{p-1} (||b_hat - b||_p^p + sum_s b(s)^{p/2} b_hat(s)^{p/2} ||c_hat_s - c_s||_p^p).

    With ``tv`` both sides are total-variation distances and the block
    weights are ``b(s)`` alone.
    """
    truth = np.asarray(truth, dtype=float)
    block_estimate = np.asarray(block_estimate, dtype=float)
    conditional = np.asarray(conditional, dtype=float)
    block_of = np.asarray(block_of)
    t = block_estimate.size
    mass = np.bincount(block_of, weights=truth, minlength=t)
    owner = mass[block_of]
    # blocks without true mass carry zero weight, so any conditional will do
    cond_true = np.divide(truth, owner, out=conditional.copy(), where=owner > 0)
    estimate = block_estimate[block_of] * conditional
    cond_err = np.abs(conditional - cond_true)
    if tv:
        lhs = 0.5 * np.abs(estimate - truth).sum()
        per_block = 0.5 * np.bincount(block_of, weights=cond_err, minlength=t)
        rhs = 0.5 * np.abs(block_estimate - mass).sum() + float(mass @ per_block)
        return float(lhs), float(rhs)
    lhs = np.sum(np.abs(estimate - truth) ** p)
    per_block = np.bincount(block_of, weights=cond_err**p, minlength=t)
    weights = mass ** (p / 2) * np.clip(block_estimate, 0.0, None) ** (p / 2)
    rhs = 2 ** (p - 1) * (np.sum(np.abs(block_estimate - mass) ** p) + float(weights @ per_block))
    return float(lhs), float(rhs)
