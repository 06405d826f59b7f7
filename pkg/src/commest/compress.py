"""Raw-sample transmission, support selection, sample compression and thresholding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ar import run_ar
from .asr import run_asr
from .core import (
    BudgetError,
    ProtocolConfig,
    SampleMatrix,
    SharedRandomness,
    Transcript,
    bits_to_int,
    ceil_log2,
    int_to_bits,
)


def sample_width(k: int) -> int:
    """Bits per transmitted symbol, at least one."""
    return max(1, ceil_log2(k))


def transmit_samples(samples: SampleMatrix, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Each encoder sends its first ``n0 = floor(l / ceil(log2 k))`` samples verbatim.

    Returns the decoder's empirical histogram over all received samples and
    the ``m x l`` bit matrix.
    """
    k = samples.k
    width = sample_width(k)
    if l < width:
        raise BudgetError(f"cannot encode one sample: l={l} < {width} bits")
    n0 = min(l // width, samples.n)
    m = samples.m
    bits = np.zeros((m, l), dtype=bool)
    bits[:, : n0 * width] = int_to_bits(samples.rows[:, :n0], width).reshape(m, n0 * width)

    received = bits_to_int(bits[:, : n0 * width].reshape(m, n0, width)).ravel()
    if received.size == 0:
        return np.zeros(k), bits
    return np.bincount(received, minlength=k)[:k] / received.size, bits


@dataclass(frozen=True)
class SupportSet:
    """Symbols whose rough estimate strictly exceeds ``threshold``.

    In the projected alphabet member ``members[j]`` becomes ``j`` and every
    other symbol becomes ``sentinel == len(members)``.
    """

    members: np.ndarray
    threshold: float
    k: int

    @property
    def sentinel(self) -> int:
        return self.members.size

    @property
    def size(self) -> int:
        return self.members.size

    def lookup(self) -> np.ndarray:
        table = np.full(self.k, self.sentinel, dtype=np.int64)
        table[self.members] = np.arange(self.members.size)
        return table


def build_support(rough, threshold: float) -> SupportSet:
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    rough = np.asarray(rough, dtype=float)
    return SupportSet(np.flatnonzero(rough > threshold), float(threshold), rough.size)


def project_samples(samples: SampleMatrix, support: SupportSet) -> SampleMatrix:
    """Map members to their index in the support and everything else to the sentinel."""
    return samples.relabel(support.lookup(), support.size + 1)


def _thirds(m: int) -> tuple[int, int]:
    third = m // 3
    return third, 2 * third


def run_compress_refine(config: ProtocolConfig, samples: SampleMatrix, stream: SharedRandomness):
    """Rough histogram, support at ``2/n``, second histogram, then AR on compressed samples.

    The final estimate takes the AR output on the support and the second
    histogram elsewhere.
    """
    m, n, k, l = config.m, config.n, config.k, config.l
    a, b = _thirds(m)
    rough, bits1 = transmit_samples(samples.select(0, a), l)
    support = build_support(rough, 2.0 / n)
    second, bits2 = transmit_samples(samples.select(a, b), l)

    estimate = second.copy()
    rest = samples.select(b, m)
    if support.size == 0 or rest.m == 0:
        bits3 = np.zeros((rest.m, l), dtype=bool)
    else:
        projected = project_samples(rest, support)
        sub_cfg = ProtocolConfig(rest.m, n, projected.k, l, config.p, config.seed, config.const_scale, "ar")
        refined, sub_transcript = run_ar(sub_cfg, projected, stream.derive("compress-ar"))
        bits3 = sub_transcript.bit_matrix()
        estimate[support.members] = refined[: support.size]
    return estimate, Transcript.from_bits(np.vstack([bits1, bits2, bits3]))


def log_factor(x: float) -> float:
    """``log2 x`` floored at one so that regularity constants never vanish."""
    return max(1.0, math.log2(x)) if x > 0 else 1.0


def compressed_dimension(m: int, n: int, l: int, const_scale: float = 1.0) -> float:
    """``k' = m l / (2000 c log2(mn) log2(n))`` with logarithms floored at one."""
    return m * l / (2000.0 * const_scale * log_factor(m * n) * log_factor(n))


def run_threshold(config: ProtocolConfig, samples: SampleMatrix, variant: str, stream: SharedRandomness):
    """Thresholding for tight total budgets.

    ``p_le2``: keep the second histogram on ``{p1 > 2/(ml)}`` and zero
    elsewhere.  ``p_gt2``: keep only ``{p1 > 2/k'}`` and estimate it from
    compressed samples with the small-alphabet successive refinement pass.
    """
    m, n, l = config.m, config.n, config.l
    if variant not in ("p_le2", "p_gt2"):
        raise ValueError(f"unknown thresholding variant {variant!r}")
    half = m // 2
    if variant == "p_gt2":
        k_prime = compressed_dimension(m, n, l, config.const_scale)
        if k_prime < 1:
            raise BudgetError("budget too tight even for thresholding")
        threshold = 2.0 / k_prime
    else:
        threshold = 2.0 / (m * l)

    rough, bits1 = transmit_samples(samples.select(0, half), l)
    support = build_support(rough, threshold)
    rest = samples.select(half, m)
    estimate = np.zeros(config.k)
    if variant == "p_le2":
        second, bits2 = transmit_samples(rest, l)
        estimate[support.members] = second[support.members]
    elif support.size == 0 or rest.m == 0:
        bits2 = np.zeros((rest.m, l), dtype=bool)
    else:
        projected = project_samples(rest, support)
        sub_cfg = ProtocolConfig(rest.m, n, projected.k, l, config.p, config.seed, config.const_scale, "asr")
        refined, sub_transcript = run_asr(sub_cfg, projected, stream.derive("threshold-refine"))
        bits2 = sub_transcript.bit_matrix()
        estimate[support.members] = refined[: support.size]
    return estimate, Transcript.from_bits(np.vstack([bits1, bits2]))
