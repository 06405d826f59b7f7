"""Domain types, instance generators, losses and randomness plumbing shared by all protocols."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SUM_TOL = 1e-9

PROTOCOLS = (
    "ar",
    "asr",
    "asr_tv",
    "compress",
    "threshold",
    "threshold_le2",
    "threshold_gt2",
    "hash",
    "plugin",
    "onebit",
    "uniform",
)


class BudgetError(ValueError):
    """Raised when a protocol cannot be run within the configured bit budget."""


def _as_probs(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("probabilities must be a non-empty 1-d array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("probabilities must be finite")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("every probability must lie in [0, 1]")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """A probability mass function over ``k`` symbols."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _as_probs(self.probs)
        if abs(probs.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return self.probs.size

    def __eq__(self, other):
        return isinstance(other, Distribution) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


@dataclass(frozen=True, eq=False)
class SubDistribution:
    """Nonnegative mass vector with entries in [0, 1] and total at most one."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _as_probs(self.probs)
        if probs.sum() > 1.0 + SUM_TOL:
            raise ValueError(f"sub-probability mass {probs.sum()!r} exceeds 1")
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class SampleMatrix:
    """``m x n`` matrix of symbol indices; row ``i`` holds encoder ``i``'s samples."""

    rows: np.ndarray
    k: int

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise ValueError("sample matrix must be 2-d")
        if not np.issubdtype(rows.dtype, np.integer):
            raise TypeError("samples must be integer symbol indices")
        if rows.size and (rows.min() < 0 or rows.max() >= self.k):
            raise ValueError(f"sample indices must lie in [0, {self.k})")
        rows = rows.astype(np.int64, copy=False)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    def select(self, start: int, stop: int) -> "SampleMatrix":
        """Rows ``start:stop`` as a new matrix over the same alphabet."""
        return SampleMatrix(self.rows[start:stop], self.k)

    def relabel(self, mapping: np.ndarray, k: int) -> "SampleMatrix":
        """Push every sample through ``mapping`` (a lookup table of length ``self.k``)."""
        return SampleMatrix(np.asarray(mapping)[self.rows], k)


@dataclass(frozen=True, eq=False)
class BitMessage:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 1:
            raise ValueError("a message is a 1-d bit array")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return self.bits.size

    def __str__(self):
        return "".join("1" if b else "0" for b in self.bits)


class MessageRows(Sequence):
    """Read-only view of an ``m x l`` bit matrix as a sequence of :class:`BitMessage`."""

    def __init__(self, bits: np.ndarray):
        self.matrix = bits

    def __len__(self):
        return self.matrix.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [BitMessage(row) for row in self.matrix[i]]
        return BitMessage(self.matrix[i])


@dataclass(frozen=True, eq=False)
class Transcript:
    """The ordered encoder-to-decoder messages of one protocol run.

    ``messages`` is the sequence of per-encoder bit strings in production
    order, ``ledger`` the number of bits each encoder spent and ``order`` the
    encoder index that produced each successive message.
    """

    messages: Sequence
    ledger: tuple
    order: tuple

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "Transcript":
        """Build a transcript from an ``m x l`` bit matrix produced in row order."""
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("expected an m x l bit matrix")
        bits = bits.copy()
        bits.setflags(write=False)
        m, l = bits.shape
        return cls(MessageRows(bits), (l,) * m, tuple(range(m)))

    @property
    def m(self) -> int:
        return len(self.messages)

    @property
    def total_bits(self) -> int:
        return sum(self.ledger)

    def bit_matrix(self) -> np.ndarray:
        if isinstance(self.messages, MessageRows):
            return self.messages.matrix
        if not self.messages:
            return np.zeros((0, 0), dtype=bool)
        return np.stack([msg.bits for msg in self.messages])


@dataclass(frozen=True)
class ProtocolConfig:
    m: int
    n: int
    k: int
    l: int
    p: float = 2.0
    seed: int = 0
    const_scale: float = 1.0
    protocol: str = "ar"

    def __post_init__(self):
        for name in ("m", "n", "k", "l"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p!r}")
        if not self.const_scale > 0:
            raise ValueError("const_scale must be positive")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def replace(self, **changes) -> "ProtocolConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "k": self.k,
            "l": self.l,
            "p": self.p,
            "seed": self.seed,
            "const_scale": self.const_scale,
            "protocol": self.protocol,
        }


def _label_key(label: Sequence) -> tuple[int, ...]:
    digest = hashlib.blake2b(repr(tuple(label)).encode(), digest_size=16).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


@dataclass(frozen=True)
class SharedRandomness:
    """Common randomness: a root seed plus a path of labels.

    ``stream(label)`` yields a fresh generator that depends only on the seed,
    the path and the label, so encoders and the decoder can regenerate the
    same draws independently.
    """

    seed: int
    path: tuple = ()

    def derive(self, *label) -> "SharedRandomness":
        return SharedRandomness(self.seed, self.path + tuple(label))

    def seed_sequence(self, *label) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=_label_key(self.path + tuple(label)),
        )

    def stream(self, *label) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence(*label)))

    def key64(self, *label) -> int:
        """A 64-bit key for counter-based draws under ``label``."""
        return int(self.seed_sequence(*label).generate_state(1, dtype=np.uint64)[0])


def lp_loss(estimate, truth, p: float) -> float:
    """Return ``sum_w |estimate(w) - truth(w)|^p``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p!r}")
    est = np.asarray(getattr(estimate, "probs", estimate), dtype=float)
    tru = np.asarray(getattr(truth, "probs", truth), dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"alphabet mismatch: {est.shape} vs {tru.shape}")
    return float(np.sum(np.abs(est - tru) ** p))


def make_two_point(epsilon: float, k: int, which: int) -> Distribution:
    """One of the two hard instances ``((1+eps)/2, (1-eps)/2, 0, ...)`` and its swap."""
    if k < 2:
        raise ValueError("two-point instances need k >= 2")
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    probs = np.zeros(k)
    hi, lo = (1 + epsilon) / 2, (1 - epsilon) / 2
    probs[0], probs[1] = (hi, lo) if which == 1 else (lo, hi)
    return Distribution(probs)


@dataclass(frozen=True)
class Family:
    """An instance family such as ``zipf(1.0)`` or ``sparse(3)``."""

    name: str
    param: float | None = None

    @classmethod
    def parse(cls, value: "str | Family") -> "Family":
        if isinstance(value, Family):
            return value
        text = value.strip().lower()
        for sep in ("(", ":", "="):
            if sep in text:
                name, _, rest = text.partition(sep)
                return cls(name.strip(), float(rest.rstrip(")").strip()))
        return cls(text)

    def __str__(self):
        if self.param is None:
            return self.name
        value = int(self.param) if float(self.param).is_integer() else self.param
        return f"{self.name}({value})"


def make_instance(family, k: int, seed: int = 0) -> Distribution:
    """Build a benchmark instance; deterministic in ``(family, k, seed)``.

    Supported families: ``uniform``, ``zipf(alpha)``, ``sparse(s)`` (uniform
    mass on ``s`` seed-chosen symbols), ``point`` (alias of ``sparse(1)`` on
    symbol 0), ``dirichlet`` / ``dirichlet(alpha)`` and ``two_point(eps)``.
    """
    fam = Family.parse(family)
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = SharedRandomness(seed).stream("instance", str(fam), k)
    if fam.name == "uniform":
        probs = np.full(k, 1.0 / k)
    elif fam.name == "zipf":
        alpha = 1.0 if fam.param is None else fam.param
        if alpha < 0:
            raise ValueError("zipf exponent must be nonnegative")
        weights = 1.0 / np.arange(1, k + 1) ** alpha
        probs = weights / weights.sum()
    elif fam.name == "point":
        probs = np.zeros(k)
        probs[0] = 1.0
    elif fam.name == "sparse":
        s = 1.0 if fam.param is None else fam.param
        if not float(s).is_integer() or not 1 <= s <= k:
            raise ValueError(f"sparsity must be an integer in [1, {k}]")
        s = int(s)
        probs = np.zeros(k)
        probs[rng.choice(k, size=s, replace=False)] = 1.0 / s
    elif fam.name == "dirichlet":
        alpha = 1.0 if fam.param is None else fam.param
        if alpha <= 0:
            raise ValueError("dirichlet concentration must be positive")
        probs = rng.dirichlet(np.full(k, alpha))
    elif fam.name in ("two_point", "twopoint"):
        eps = 0.0 if fam.param is None else fam.param
        return make_two_point(eps, k, 1)
    else:
        raise ValueError(f"unknown instance family {fam.name!r}")
    return Distribution(probs / probs.sum())


def sample(dist: Distribution, m: int, n: int, stream: np.random.Generator) -> SampleMatrix:
    """Draw an ``m x n`` matrix of i.i.d. symbols from ``dist``."""
    cdf = np.cumsum(dist.probs)
    cdf[-1] = 1.0
    u = stream.random((m, n))
    rows = np.searchsorted(cdf, u, side="right")
    np.minimum(rows, dist.k - 1, out=rows)
    return SampleMatrix(rows, dist.k)


def clip_to_unit(estimate) -> np.ndarray:
    """Clip every coordinate into [0, 1]; this never increases any coordinate's error."""
    arr = np.asarray(estimate, dtype=float)
    if np.any(np.isnan(arr)):
        raise ValueError("estimate contains NaN")
    return np.clip(arr, 0.0, 1.0)


def ceil_log2(x: int) -> int:
    """Bits needed to index ``x`` distinct values (0 for ``x <= 1``)."""
    return max(0, math.ceil(math.log2(x))) if x > 1 else 0


def int_to_bits(values, width: int) -> np.ndarray:
    """Big-endian ``width``-bit encoding of each integer in ``values``."""
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((values[..., None] >> shifts) & 1).astype(bool)


def bits_to_int(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    width = bits.shape[-1]
    weights = np.int64(1) << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits @ weights
