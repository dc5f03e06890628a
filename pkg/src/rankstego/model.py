"""Deterministic next-token ranking models.

Every model exposes the same small surface: ``tokenize``, ``detokenize``,
``next_ranking`` and a ``fingerprint``. Ranks are 1-based everywhere.
"""

from __future__ import annotations

import abc
import hashlib
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContextOverflow,
    EncodingError,
    FingerprintMismatch,
    NondeterminismDetected,
    RankOutOfRange,
    TokenOutOfRange,
)

DEFAULT_CONTEXT_WINDOW = 8192
PROBE_TEXT = "The quick brown fox jumps over the lazy dog."


class TokenSequence(list):
    """A list of token ids that remembers which model produced it."""

    def __init__(self, tokens: Iterable[int] = (), fingerprint: str | None = None):
        super().__init__(tokens)
        self.fingerprint = fingerprint


class NextTokenRanking:
    """Vocabulary sorted by descending probability, ties broken by ascending id."""

    __slots__ = ("ordering", "probs", "log_probs", "_positions")

    def __init__(self, ordering: np.ndarray, probs: np.ndarray, log_probs: np.ndarray | None = None):
        self.ordering = ordering
        self.probs = probs
        self.log_probs = np.log(probs) if log_probs is None else log_probs
        self._positions: np.ndarray | None = None

    @classmethod
    def from_log_probs(cls, log_probs: np.ndarray) -> NextTokenRanking:
        log_probs = np.asarray(log_probs, dtype=np.float64)
        probs = np.exp(log_probs)
        # stable sort on the negated values keeps ascending ids within ties
        ordering = np.argsort(-probs, kind="stable")
        return cls(ordering, probs, log_probs)

    @classmethod
    def from_logits(cls, logits) -> NextTokenRanking:
        logits = np.asarray(logits, dtype=np.float64)
        shifted = logits - logits.max()
        log_probs = shifted - np.log(np.exp(shifted).sum())
        return cls.from_log_probs(log_probs)

    @property
    def size(self) -> int:
        return len(self.ordering)

    @property
    def positions(self) -> np.ndarray:
        if self._positions is None:
            pos = np.empty_like(self.ordering)
            pos[self.ordering] = np.arange(len(self.ordering))
            self._positions = pos
        return self._positions

    def rank_of(self, token: int) -> int:
        if not 0 <= token < len(self.ordering):
            raise TokenOutOfRange(f"token {token} outside vocabulary of size {len(self.ordering)}")
        return int(self.positions[token]) + 1

    def token_at_rank(self, rank: int) -> int:
        if not 1 <= rank <= len(self.ordering):
            raise RankOutOfRange(
                f"rank {rank} outside 1..{len(self.ordering)}; bridge the rank stream first"
            )
        return int(self.ordering[rank - 1])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.ordering, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.probs, dtype="<f8").tobytes())
        return h.hexdigest()

    def validate(self, atol: float = 1e-6) -> None:
        """Raise ``AssertionError`` unless the ranking invariants hold."""
        n = len(self.ordering)
        assert len(self.probs) == n
        assert np.array_equal(np.sort(self.ordering), np.arange(n)), "ordering is not a permutation"
        assert abs(float(self.probs.sum()) - 1.0) <= atol, "probabilities do not sum to 1"
        assert np.all((self.probs >= 0) & (self.probs <= 1))
        p = self.probs[self.ordering]
        strictly = p[:-1] > p[1:]
        tied = (p[:-1] == p[1:]) & (self.ordering[:-1] < self.ordering[1:])
        assert np.all(strictly | tied), "ordering violates probability/tie-break order"


def rank_of(ranking: NextTokenRanking, token: int) -> int:
    return ranking.rank_of(token)


def token_at_rank(ranking: NextTokenRanking, rank: int) -> int:
    return ranking.token_at_rank(rank)


class LanguageModel(abc.ABC):
    """Contract shared by the reference model and external backends."""

    vocab_size: int
    context_window: int = DEFAULT_CONTEXT_WINDOW
    bos_token_id: int | None = None

    @property
    @abc.abstractmethod
    def fingerprint(self) -> str:
        """Hex digest identifying weights plus configuration."""

    @abc.abstractmethod
    def tokenize(self, text: str) -> TokenSequence: ...

    @abc.abstractmethod
    def _detokenize(self, tokens: Sequence[int]) -> str: ...

    @abc.abstractmethod
    def _next_ranking(self, context: Sequence[int]) -> NextTokenRanking: ...

    def detokenize(self, tokens: Sequence[int]) -> str:
        fp = getattr(tokens, "fingerprint", None)
        if fp is not None and fp != self.fingerprint:
            raise FingerprintMismatch("token sequence was produced by a different model")
        return self._detokenize(tokens)

    def next_ranking(self, context: Sequence[int]) -> NextTokenRanking:
        self.check_window(len(context))
        return self._next_ranking(context)

    def check_window(self, length: int) -> None:
        if length > self.context_window:
            raise ContextOverflow(f"context of {length} tokens exceeds window of {self.context_window}")

    def greedy(self, context: Sequence[int], n: int) -> list[int]:
        """``n`` steps of greedy decoding after ``context``."""
        ctx = list(context)
        out = []
        for _ in range(n):
            tok = self.next_ranking(ctx).token_at_rank(1)
            out.append(tok)
            ctx.append(tok)
        return out


def probe_determinism(model: LanguageModel, repeats: int = 2, context: Sequence[int] | None = None) -> str:
    """Evaluate a fixed probe context ``repeats`` times; return the common digest."""
    if context is None:
        context = list(model.tokenize(PROBE_TEXT))
        if model.bos_token_id is not None:
            context = [model.bos_token_id, *context]
    digests = {model.next_ranking(context).digest() for _ in range(repeats)}
    if len(digests) != 1:
        raise NondeterminismDetected(
            f"probe context produced {len(digests)} distinct rankings over {repeats} evaluations"
        )
    return digests.pop()


# --- reference bigram model -------------------------------------------------

RSBG_MAGIC = b"RSBG"
RSBG_VERSION = 1
_RSBG_HEADER = struct.Struct("<4sIId")
_BYTES = 256
_UNIGRAM_ROW = _BYTES


class BigramModel(LanguageModel):
    """Byte-level bigram model with additive smoothing.

    ``counts`` has 257 rows: rows 0..255 are bigram counts keyed by the
    previous byte, row 256 holds unigram counts. The unigram row serves the
    empty context and any previous byte that never had a successor in the
    corpus. Text is tokenized as its UTF-8 bytes.
    """

    vocab_size = _BYTES

    def __init__(self, counts: np.ndarray, smoothing: float = 1.0, context_window: int = DEFAULT_CONTEXT_WINDOW):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (_BYTES + 1, _BYTES):
            raise ValueError(f"counts must have shape (257, 256), got {counts.shape}")
        if smoothing <= 0:
            raise ValueError("smoothing must be positive")
        self.counts = counts
        self.smoothing = float(smoothing)
        self.context_window = context_window
        self._rankings: list[NextTokenRanking | None] = [None] * (_BYTES + 1)
        seen = counts[:_BYTES].sum(axis=1) > 0
        self._row_for = [b if seen[b] else _UNIGRAM_ROW for b in range(_BYTES)]
        self._fingerprint = hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def from_corpus(cls, corpus: str | bytes, smoothing: float = 1.0, **kw) -> BigramModel:
        data = corpus.encode("utf-8") if isinstance(corpus, str) else bytes(corpus)
        arr = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
        counts = np.zeros((_BYTES + 1, _BYTES), dtype=np.int64)
        if len(arr):
            np.add.at(counts, (arr[:-1], arr[1:]), 1)
            counts[_UNIGRAM_ROW] = np.bincount(arr, minlength=_BYTES)
        return cls(counts, smoothing, **kw)

    # serialization

    def to_bytes(self) -> bytes:
        header = _RSBG_HEADER.pack(RSBG_MAGIC, RSBG_VERSION, _BYTES + 1, self.smoothing)
        return header + self.counts.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, **kw) -> BigramModel:
        if len(blob) < _RSBG_HEADER.size:
            raise ValueError("truncated RSBG header")
        magic, version, rows, smoothing = _RSBG_HEADER.unpack_from(blob)
        if magic != RSBG_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != RSBG_VERSION:
            raise ValueError(f"unsupported RSBG version {version}")
        body = blob[_RSBG_HEADER.size:]
        if rows != _BYTES + 1 or len(body) != rows * _BYTES * 8:
            raise ValueError("RSBG body has the wrong size")
        counts = np.frombuffer(body, dtype="<i8").reshape(rows, _BYTES)
        return cls(counts, smoothing, **kw)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path, **kw) -> BigramModel:
        return cls.from_bytes(Path(path).read_bytes(), **kw)

    # model contract

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    def tokenize(self, text: str) -> TokenSequence:
        try:
            data = text.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise EncodingError(str(exc)) from None
        return TokenSequence(data, self._fingerprint)

    def _detokenize(self, tokens: Sequence[int]) -> str:
        try:
            data = bytes(tokens)
        except ValueError:
            raise TokenOutOfRange("byte-level token ids must lie in 0..255") from None
        # invalid UTF-8 surfaces as U+FFFD, caught by the codec's retokenization check
        return data.decode("utf-8", errors="replace")

    def row_probabilities(self, row: int) -> tuple[np.ndarray, np.ndarray]:
        counts = self.counts[row]
        denom = float(counts.sum()) + self.smoothing * _BYTES
        numer = counts.astype(np.float64) + self.smoothing
        return numer / denom, np.log(numer) - np.log(denom)

    def _next_ranking(self, context: Sequence[int]) -> NextTokenRanking:
        row = self._row_for[context[-1]] if len(context) else _UNIGRAM_ROW
        cached = self._rankings[row]
        if cached is None:
            probs, log_probs = self.row_probabilities(row)
            # integer counts give an exact order; probabilities are monotone in them
            ordering = np.lexsort((np.arange(_BYTES), -self.counts[row]))
            cached = NextTokenRanking(ordering, probs, log_probs)
            cached.positions  # noqa: B018 - warm the inverse permutation
            self._rankings[row] = cached
        return cached


def build_reference_model(corpus: str | bytes, smoothing: float = 1.0, **kw) -> BigramModel:
    return BigramModel.from_corpus(corpus, smoothing, **kw)


def fingerprint(model: LanguageModel) -> str:
    return model.fingerprint


def bundled_corpus() -> str:
    return (Path(__file__).parent / "data" / "corpus.txt").read_text(encoding="utf-8")


def bundled_words() -> list[str]:
    return (Path(__file__).parent / "data" / "words.txt").read_text(encoding="utf-8").split()


def default_reference_model(**kw) -> BigramModel:
    return BigramModel.from_corpus(bundled_corpus(), **kw)
