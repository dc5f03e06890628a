"""Move rank streams between models with different vocabulary sizes.

Two routes are provided:

* a digit-block remap, where the rarest encoder ranks are spelled as two
  decoder ranks drawn from a reserved block at the tail of the decoder
  vocabulary;
* an arithmetic recoder that re-expresses a rank stream under a different
  rank distribution, losslessly and with near-optimal length.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import extract_ranks
from .errors import (
    MalformedDigit,
    RankOutOfRange,
    RemapAmbiguity,
    TruncatedCode,
    Unbridgeable,
)
from .model import LanguageModel


@dataclass(frozen=True)
class RemapPlan:
    v_enc: int
    v_dec: int
    direct_limit: int  # L: ranks 1..L pass through unchanged
    block_size: int  # B: digit base, reserved ranks L+1..L+B

    @property
    def is_identity(self) -> bool:
        return self.block_size == 0

    @property
    def block(self) -> range:
        return range(self.direct_limit + 1, self.direct_limit + self.block_size + 1)

    @property
    def ambiguous(self) -> range:
        """Encoder ranks whose high digit would be 0 and collide with a direct rank."""
        if self.is_identity:
            return range(0)
        lo = self.direct_limit + 1
        return range(lo, min(lo + self.block_size, self.v_enc + 1))


def _ceil_sqrt(n: int) -> int:
    s = math.isqrt(n)
    return s if s * s == n else s + 1


def plan_remap(v_enc: int, v_dec: int) -> RemapPlan:
    if v_enc <= v_dec:
        return RemapPlan(v_enc, v_dec, v_enc, 0)
    if v_dec < 4:
        raise Unbridgeable(f"decoder vocabulary of {v_dec} is too small")
    block = _ceil_sqrt(v_enc - v_dec) + 1
    direct = v_dec - block - 1
    if direct < 1:
        raise Unbridgeable(f"no digit block fits: {v_enc} -> {v_dec}")
    # largest offset must still be two digits in base `block`
    if v_enc - direct - 1 >= block * block:
        raise Unbridgeable(f"two base-{block} digits cannot cover {v_enc} -> {v_dec}")
    return RemapPlan(v_enc, v_dec, direct, block)


def remap_rank(plan: RemapPlan, rank: int) -> list[int]:
    if not 1 <= rank <= plan.v_enc:
        raise RankOutOfRange(f"rank {rank} outside 1..{plan.v_enc}")
    if rank <= plan.direct_limit:
        return [rank]
    hi, lo = divmod(rank - (plan.direct_limit + 1), plan.block_size)
    if hi == 0:
        raise RemapAmbiguity(
            f"rank {rank} would start with digit 0, indistinguishable from direct rank {plan.direct_limit}"
        )
    return [plan.direct_limit + hi, plan.direct_limit + lo]


def remap_stream(plan: RemapPlan, ranks: Iterable[int]) -> list[int]:
    out: list[int] = []
    for r in ranks:
        out.extend(remap_rank(plan, r))
    return out


def unremap_stream(plan: RemapPlan, ranks: Sequence[int]) -> list[int]:
    L, B = plan.direct_limit, plan.block_size
    out = []
    i = 0
    while i < len(ranks):
        r = ranks[i]
        if r < 1 or r > plan.v_dec:
            raise MalformedDigit(f"rank {r} at position {i} outside decoder vocabulary")
        if r <= L:
            out.append(r)
            i += 1
            continue
        if r > L + B or r - L >= B:
            raise MalformedDigit(f"rank {r} at position {i} is not a valid leading digit")
        if i + 1 >= len(ranks):
            raise TruncatedCode(f"stream ends inside a two-rank code at position {i}")
        lo = ranks[i + 1] - L
        if not 0 <= lo < B:
            raise MalformedDigit(f"rank {ranks[i + 1]} at position {i + 1} is not a valid digit")
        orig = L + 1 + (r - L) * B + lo
        if orig > plan.v_enc:
            raise MalformedDigit(f"code at position {i} decodes to rank {orig} > {plan.v_enc}")
        out.append(orig)
        i += 2
    return out


# --- rank frequency tables --------------------------------------------------

RSRT_MAGIC = b"RSRT"
RSRT_VERSION = 1
_RSRT_HEADER = struct.Struct("<4sIII")
_RSRT_PAIR = struct.Struct("<IQ")


class RankFrequencyTable:
    """Counts per rank 1..V (stored 0-based)."""

    def __init__(self, counts: Sequence[int]):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or len(counts) == 0:
            raise ValueError("counts must be a non-empty vector")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        self.counts = counts

    @property
    def vocab_size(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def smoothed(self) -> bool:
        return bool(np.all(self.counts > 0))

    def count(self, rank: int) -> int:
        return int(self.counts[rank - 1])

    @classmethod
    def uniform(cls, vocab_size: int, count: int = 1) -> RankFrequencyTable:
        return cls(np.full(vocab_size, count, dtype=np.int64))

    @classmethod
    def from_ranks(cls, ranks: Iterable[int], vocab_size: int, smoothing: int = 1) -> RankFrequencyTable:
        counts = np.full(vocab_size, smoothing, dtype=np.int64)
        for r in ranks:
            if not 1 <= r <= vocab_size:
                raise RankOutOfRange(f"rank {r} outside 1..{vocab_size}")
            counts[r - 1] += 1
        return cls(counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, RankFrequencyTable) and np.array_equal(self.counts, other.counts)

    def to_bytes(self) -> bytes:
        nz = np.flatnonzero(self.counts)
        parts = [_RSRT_HEADER.pack(RSRT_MAGIC, RSRT_VERSION, self.vocab_size, len(nz))]
        parts.extend(_RSRT_PAIR.pack(int(i) + 1, int(self.counts[i])) for i in nz)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> RankFrequencyTable:
        magic, version, vocab, n = _RSRT_HEADER.unpack_from(blob)
        if magic != RSRT_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != RSRT_VERSION:
            raise ValueError(f"unsupported RSRT version {version}")
        if len(blob) != _RSRT_HEADER.size + n * _RSRT_PAIR.size:
            raise ValueError("RSRT body has the wrong size")
        counts = np.zeros(vocab, dtype=np.int64)
        prev = 0
        for rank, c in _RSRT_PAIR.iter_unpack(blob[_RSRT_HEADER.size:]):
            if not prev < rank <= vocab:
                raise ValueError("RSRT pairs must be sorted by rank and within the vocabulary")
            counts[rank - 1] = c
            prev = rank
        return cls(counts)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> RankFrequencyTable:
        return cls.from_bytes(Path(path).read_bytes())


def build_rank_table(
    model: LanguageModel,
    corpus: Iterable[Sequence[int]],
    context: Sequence[int] = (),
    smoothing: int = 1,
) -> RankFrequencyTable:
    """Marginal rank counts over a corpus, plus ``smoothing`` on every rank."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus must not be empty")
    ranks = []
    for seq in corpus:
        ranks.extend(extract_ranks(model, seq, context).ranks)
    return RankFrequencyTable.from_ranks(ranks, model.vocab_size, smoothing)


# --- arithmetic recoding ----------------------------------------------------
#
# Intervals are exact: (low, width, denom) stands for [low/denom, (low+width)/denom)
# with arbitrary-precision integers, so both directions agree bit for bit.

EOS_COUNT = 1
# source counts are scaled so the end symbol costs ~20 bits once instead of
# taxing every symbol: per-symbol overhead is log2(1 + 1/(total * 2**20))
EOS_SCALE = 1 << 20


class _Cdf:
    def __init__(self, table: RankFrequencyTable, eos: bool):
        if not table.smoothed:
            raise ValueError("rank table has zero-count ranks; smooth it first")
        freqs = [int(c) for c in table.counts]
        if eos:
            freqs = [f * EOS_SCALE for f in freqs]
            freqs.append(EOS_COUNT)
        self.freqs = freqs
        self.cum = [0, *np.cumsum(freqs, dtype=object).tolist()]
        self.total = self.cum[-1]
        self.n_ranks = table.vocab_size

    def symbol_at(self, target: int) -> int:
        return bisect_right(self.cum, target) - 1


def _narrow(iv: tuple[int, int, int], cdf: _Cdf, sym: int) -> tuple[int, int, int]:
    low, width, denom = iv
    return (low * cdf.total + width * cdf.cum[sym], width * cdf.freqs[sym], denom * cdf.total)


def _contains(outer: tuple[int, int, int], inner: tuple[int, int, int]) -> bool:
    ol, ow, od = outer
    il, iw, id_ = inner
    return il * od >= ol * id_ and (il + iw) * od <= (ol + ow) * id_


def arithmetic_recode(
    src_ranks: Sequence[int], src_table: RankFrequencyTable, dst_table: RankFrequencyTable
) -> list[int]:
    """Re-express ``src_ranks`` as ranks distributed like ``dst_table``.

    The source stream plus an end-of-stream symbol selects an interval under
    the source model; destination ranks are chosen by following the
    interval's midpoint until the destination interval fits inside it.
    """
    src = _Cdf(src_table, eos=True)
    dst = _Cdf(dst_table, eos=False)
    if max(dst.freqs) == dst.total:
        raise ValueError("destination table needs at least two ranks")
    iv = (0, 1, 1)
    for r in src_ranks:
        if not 1 <= r <= src.n_ranks:
            raise RankOutOfRange(f"rank {r} outside 1..{src.n_ranks}")
        iv = _narrow(iv, src, r - 1)
    iv = _narrow(iv, src, src.n_ranks)
    low, width, denom = iv
    x_num, x_den = 2 * low + width, 2 * denom

    out = []
    j = (0, 1, 1)
    while not _contains(iv, j):
        jl, jw, jd = j
        target = ((x_num * jd - jl * x_den) * dst.total) // (jw * x_den)
        sym = dst.symbol_at(target)
        out.append(sym + 1)
        j = _narrow(j, dst, sym)
    return out


def arithmetic_unrecode(
    dst_ranks: Sequence[int], src_table: RankFrequencyTable, dst_table: RankFrequencyTable
) -> list[int]:
    """Inverse of :func:`arithmetic_recode` for the same pair of tables."""
    src = _Cdf(src_table, eos=True)
    dst = _Cdf(dst_table, eos=False)
    j = (0, 1, 1)
    for r in dst_ranks:
        if not 1 <= r <= dst.n_ranks:
            raise RankOutOfRange(f"rank {r} outside 1..{dst.n_ranks}")
        j = _narrow(j, dst, r - 1)
    jl, _, jd = j

    out = []
    iv = (0, 1, 1)
    while True:
        low, width, denom = iv
        target = ((jl * denom - low * jd) * src.total) // (width * jd)
        sym = src.symbol_at(target)
        iv = _narrow(iv, src, sym)
        if not _contains(iv, j):
            raise ValueError("rank stream was not produced by arithmetic_recode with these tables")
        if sym == src.n_ranks:
            return out
        out.append(sym + 1)


def information_bits(ranks: Sequence[int], table: RankFrequencyTable, eos: bool = False) -> float:
    """Ideal code length of ``ranks`` under ``table`` in bits."""
    cdf = _Cdf(table, eos=eos)
    bits = sum(math.log2(cdf.total / cdf.freqs[r - 1]) for r in ranks)
    if eos:
        bits += math.log2(cdf.total / cdf.freqs[-1])
    return bits
