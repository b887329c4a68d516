"""Word-level lossless codecs (RLE, canonical Huffman) and ratio estimation.

Every scheme operates on unsigned words of a fixed bit width L and encodes
each data word independently of its neighbours (except for run grouping in
RLE). Ratios are encoded_bits / (n_words * L); values above 1 mean the
stream expanded.
"""

from __future__ import annotations

import heapq
import struct
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

RLE_RUN_BITS = 8
RLE_MAX_RUN = (1 << RLE_RUN_BITS) - 1
TENSOR_MAGIC = b"WSTR"

SCHEMES = ("none", "rle", "huffman")


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class WordStream:
    words: tuple[int, ...]
    word_length: int

    def __post_init__(self):
        if self.word_length not in (8, 16, 32):
            raise CodecError(f"unsupported word length {self.word_length}")
        for w in self.words:
            if not (0 <= w < (1 << self.word_length)):
                raise CodecError(f"word {w} out of range for {self.word_length}-bit stream")

    @property
    def raw_bits(self) -> int:
        return len(self.words) * self.word_length


class BitWriter:
    def __init__(self):
        self._acc = 0
        self._nbits = 0

    def put(self, value: int, nbits: int) -> None:
        self._acc = (self._acc << nbits) | (value & ((1 << nbits) - 1))
        self._nbits += nbits

    @property
    def nbits(self) -> int:
        return self._nbits

    def getvalue(self) -> "Bits":
        return Bits(self._acc, self._nbits)


@dataclass(frozen=True)
class Bits:
    """An immutable big-endian bit string."""
    value: int
    nbits: int

    def reader(self) -> "BitReader":
        return BitReader(self.value, self.nbits)


class BitReader:
    def __init__(self, value: int, nbits: int):
        self._value = value
        self._left = nbits

    def take(self, nbits: int) -> int:
        if nbits > self._left:
            raise CodecError("truncated bitstream")
        self._left -= nbits
        return (self._value >> self._left) & ((1 << nbits) - 1)

    @property
    def remaining(self) -> int:
        return self._left


# -- RLE ---------------------------------------------------------------------


def rle_encode(stream: WordStream) -> Bits:
    """Fixed-width tokens: an L-bit literal followed by an 8-bit run length.

    Runs longer than 255 are split across tokens.
    """
    w = BitWriter()
    words = stream.words
    i = 0
    n = len(words)
    while i < n:
        v = words[i]
        run = 1
        while i + run < n and words[i + run] == v and run < RLE_MAX_RUN:
            run += 1
        w.put(v, stream.word_length)
        w.put(run, RLE_RUN_BITS)
        i += run
    return w.getvalue()


def rle_decode(bits: Bits, word_length: int) -> WordStream:
    r = bits.reader()
    token = word_length + RLE_RUN_BITS
    if bits.nbits % token != 0:
        raise CodecError(f"bitstream length {bits.nbits} is not a multiple of the {token}-bit token")
    out: list[int] = []
    while r.remaining:
        v = r.take(word_length)
        run = r.take(RLE_RUN_BITS)
        if run == 0:
            raise CodecError("invalid zero-length run")
        out.extend([v] * run)
    return WordStream(tuple(out), word_length)


# -- canonical Huffman -------------------------------------------------------


@dataclass(frozen=True)
class CodecTable:
    scheme: str
    word_length: int = 8
    lengths: dict[int, int] = field(default_factory=dict)  # symbol -> code length

    def codes(self) -> dict[int, tuple[int, int]]:
        """Canonical (code, nbits) per symbol: shorter codes first, ties by symbol."""
        ordered = sorted(self.lengths.items(), key=lambda kv: (kv[1], kv[0]))
        out: dict[int, tuple[int, int]] = {}
        code = 0
        prev_len = 0
        for sym, ln in ordered:
            code <<= (ln - prev_len)
            out[sym] = (code, ln)
            code += 1
            prev_len = ln
        return out


def huffman_build(hist: dict[int, int], word_length: int = 8) -> CodecTable:
    """Build a canonical prefix code from a symbol histogram."""
    items = sorted((s, c) for s, c in hist.items() if c > 0)
    if not items:
        raise CodecError("empty histogram")
    if len(items) == 1:
        return CodecTable("huffman", word_length, {items[0][0]: 1})
    # (count, tiebreak, symbols) triples; tiebreak keeps heap order deterministic
    heap: list[tuple[int, int, list[int]]] = []
    lengths = {s: 0 for s, _ in items}
    for i, (s, c) in enumerate(items):
        heap.append((c, i, [s]))
    heapq.heapify(heap)
    tiebreak = len(items)
    while len(heap) > 1:
        c1, _, s1 = heapq.heappop(heap)
        c2, _, s2 = heapq.heappop(heap)
        for s in s1 + s2:
            lengths[s] += 1
        heapq.heappush(heap, (c1 + c2, tiebreak, s1 + s2))
        tiebreak += 1
    return CodecTable("huffman", word_length, lengths)


def huffman_encode(stream: WordStream, table: CodecTable) -> Bits:
    codes = table.codes()
    w = BitWriter()
    try:
        for word in stream.words:
            code, n = codes[word]
            w.put(code, n)
    except KeyError as exc:
        raise CodecError(f"symbol {exc} not in code table") from None
    return w.getvalue()


def huffman_decode(bits: Bits, table: CodecTable, n_words: int) -> WordStream:
    # canonical decode: first-code/first-symbol per length
    by_len: dict[int, list[int]] = {}
    for sym, (code, n) in sorted(table.codes().items(), key=lambda kv: (kv[1][1], kv[1][0])):
        by_len.setdefault(n, []).append((code, sym))
    first = {n: lst[0][0] for n, lst in by_len.items()}
    syms = {n: [s for _, s in lst] for n, lst in by_len.items()}
    r = bits.reader()
    out = []
    for _ in range(n_words):
        code = 0
        n = 0
        while True:
            code = (code << 1) | r.take(1)
            n += 1
            if n in first and code - first[n] < len(syms[n]) and code >= first[n]:
                out.append(syms[n][code - first[n]])
                break
            if n > 64:
                raise CodecError("invalid bitstream: no code matched within 64 bits")
    return WordStream(tuple(out), table.word_length)


# -- measurement -------------------------------------------------------------


def encoded_bits(stream: WordStream, scheme: str, table: CodecTable | None = None) -> int:
    if scheme == "none":
        return stream.raw_bits
    if scheme == "rle":
        return rle_encode(stream).nbits
    if scheme == "huffman":
        if table is None:
            table = huffman_build(Counter(stream.words), stream.word_length)
        return huffman_encode(stream, table).nbits
    raise CodecError(f"unknown scheme {scheme!r}")


def measure_ratio(stream: WordStream, scheme: str, table: CodecTable | None = None) -> Fraction:
    if not stream.words:
        raise CodecError("cannot measure an empty stream")
    return Fraction(encoded_bits(stream, scheme, table), stream.raw_bits)


@dataclass(frozen=True)
class RatioEstimate:
    scheme: str
    c_bar: float
    minimum: float
    maximum: float
    per_sample: tuple[float, ...]


def estimate_ratio(samples: list[WordStream], scheme: str) -> RatioEstimate:
    """Average encoded/raw ratio over a calibration set."""
    if not samples:
        raise CodecError("need at least one calibration sample")
    ratios = [float(measure_ratio(s, scheme)) for s in samples]
    return RatioEstimate(
        scheme=scheme,
        c_bar=sum(ratios) / len(ratios),
        minimum=min(ratios),
        maximum=max(ratios),
        per_sample=tuple(ratios),
    )


# -- raw tensor files --------------------------------------------------------

_WORD_FMT = {8: "B", 16: "H", 32: "I"}


def write_tensor_file(path: str, stream: WordStream) -> None:
    """Little-endian packed words behind a 16-byte (magic, L, count) header."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQ", TENSOR_MAGIC, stream.word_length, len(stream.words)))
        fh.write(struct.pack(f"<{len(stream.words)}{_WORD_FMT[stream.word_length]}", *stream.words))


def read_tensor_file(path: str) -> WordStream:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise CodecError(f"{path}: truncated header")
        magic, word_length, count = struct.unpack("<4sIQ", header)
        if magic != TENSOR_MAGIC:
            raise CodecError(f"{path}: bad magic {magic!r}")
        if word_length not in _WORD_FMT:
            raise CodecError(f"{path}: unsupported word length {word_length}")
        payload = fh.read()
    expect = count * (word_length // 8)
    if len(payload) != expect:
        raise CodecError(f"{path}: expected {expect} payload bytes, found {len(payload)}")
    words = struct.unpack(f"<{count}{_WORD_FMT[word_length]}", payload)
    return WordStream(words, word_length)


def synthetic_activations(n_samples: int, n_words: int, word_length: int,
                          zero_fraction: float = 0.5, seed: int = 0,
                          mean_zero_run: float = 12.0) -> list[WordStream]:
    """Deterministic ReLU-like calibration data.

    Zeros come in geometric bursts (rectified activations are spatially
    clustered), non-zero words follow a small-magnitude distribution.
    """
    import numpy as np

    rng = np.random.default_rng(seed)
    hi = (1 << word_length) - 1
    mean_val_run = max(1.0, mean_zero_run * (1 - zero_fraction) / max(zero_fraction, 1e-9))
    out = []
    for _ in range(n_samples):
        words: list[int] = []
        zero_phase = rng.random() < zero_fraction
        while len(words) < n_words:
            if zero_phase:
                run = 1 + rng.geometric(1.0 / mean_zero_run)
                words.extend([0] * run)
            else:
                run = 1 + rng.geometric(1.0 / mean_val_run)
                vals = np.minimum(np.abs(rng.normal(0.0, 0.12 * hi, size=run)).astype(np.int64) + 1, hi)
                words.extend(int(x) for x in vals)
            zero_phase = not zero_phase
        out.append(WordStream(tuple(words[:n_words]), word_length))
    return out


def synthetic_weights(n_words: int, word_length: int, seed: int) -> WordStream:
    """Deterministic stand-in weight data, biased to small magnitudes."""
    import numpy as np

    rng = np.random.default_rng(seed)
    hi = (1 << word_length) - 1
    raw = rng.normal(0.0, 0.15, size=n_words)
    vals = np.clip(np.round(raw * hi), -(hi // 2), hi // 2).astype(np.int64) & hi
    return WordStream(tuple(int(x) for x in vals), word_length)
