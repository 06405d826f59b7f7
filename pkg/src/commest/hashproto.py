"""Non-interactive random hashing for one sample per encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BitMessage, ProtocolConfig, SampleMatrix, SharedRandomness, Transcript, bits_to_int, clip_to_unit, int_to_bits

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class HashFamily:
    """Per-encoder hash tables ``h_i: [0, k) -> [0, 2^l)`` from shared randomness.

    ``h_i(w)`` is a counter-based draw keyed by the ``("hash",)`` stream and
    indexed by ``(i, w)``: every entry is an independent uniform bucket, and
    encoder ``i`` can rebuild its own table without touching anybody else's.
    """

    key: int
    k: int
    l: int

    @classmethod
    def from_randomness(cls, stream: SharedRandomness, k: int, l: int) -> "HashFamily":
        return cls(stream.key64("hash"), k, l)

    def buckets(self, encoders, symbols=None) -> np.ndarray:
        """``H[a, b] = h_{encoders[a]}(symbols[b])``."""
        enc = np.atleast_1d(np.asarray(encoders, dtype=np.uint64))
        sym = np.arange(self.k, dtype=np.uint64) if symbols is None else np.atleast_1d(np.asarray(symbols, dtype=np.uint64))
        with np.errstate(over="ignore"):
            first = _splitmix64(np.uint64(self.key) ^ _splitmix64(enc))
            z = _splitmix64(first[:, None] ^ (sym[None, :] * _GOLDEN))
        return (z >> np.uint64(64 - self.l)).astype(np.int64)

    def table(self, i: int) -> np.ndarray:
        return self.buckets([i])[0]


def hash_encode(sample: int, table: np.ndarray, l: int) -> BitMessage:
    """Encoder ``i`` sends the ``l``-bit bucket ``h_i(W_i)``."""
    return BitMessage(int_to_bits(table[sample], l))


def _rescale(matches: np.ndarray, m: int, l: int) -> np.ndarray:
    buckets = 2.0**l
    return buckets / (buckets - 1.0) * matches / m - 1.0 / (buckets - 1.0)


def hash_estimate(transcript: Transcript, hashes: HashFamily, k: int, l: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Rescaled match histogram; returns the raw estimate and its clipped companion."""
    if l < 1:
        raise ValueError("hashing needs l >= 1")
    if transcript.m != m or any(size != l for size in transcript.ledger):
        raise ValueError(f"expected {m} messages of {l} bits")
    received = bits_to_int(transcript.bit_matrix())
    matches = np.zeros(k, dtype=np.int64)
    # bounded memory: fold over encoder chunks
    for start in range(0, m, 4096):
        stop = min(m, start + 4096)
        table = hashes.buckets(np.arange(start, stop))
        matches += (table == received[start:stop, None]).sum(axis=0)
    raw = _rescale(matches, m, l)
    return raw, clip_to_unit(raw)


def run_hash(config: ProtocolConfig, samples: SampleMatrix, stream: SharedRandomness):
    """Hash the first sample of every encoder; returns the raw estimate and the transcript."""
    m, k, l = config.m, config.k, config.l
    if samples.n != 1:
        raise ValueError("the hashing protocol is defined for one sample per encoder")
    hashes = HashFamily.from_randomness(stream, k, l)
    # each encoder sees only its own sample and its own hash table
    first = samples.rows[:, 0]
    buckets = np.empty(m, dtype=np.int64)
    for start in range(0, m, 4096):
        stop = min(m, start + 4096)
        table = hashes.buckets(np.arange(start, stop))
        buckets[start:stop] = table[np.arange(stop - start), first[start:stop]]
    transcript = Transcript.from_bits(int_to_bits(buckets, l))
    raw, _ = hash_estimate(transcript, hashes, k, l, m)
    return raw, transcript
