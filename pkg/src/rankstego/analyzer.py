"""Plausibility scoring and rank statistics for texts and stegotexts."""

from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .codec import StegoKey, encode_detailed, extract_ranks
from .errors import LengthMismatch
from .model import LanguageModel, bundled_words

EXACT_RANKS = 100
PRINTABLE = "".join(chr(c) for c in range(32, 127))


@dataclass(frozen=True)
class PlausibilityScore:
    log_prob: float
    token_count: int
    model_fingerprint: str


def default_context(model: LanguageModel) -> list[int]:
    """Empty, or just the begin-of-sequence token for models that need one."""
    return [] if model.bos_token_id is None else [model.bos_token_id]


def token_log_probs(model: LanguageModel, tokens: Sequence[int], context: Sequence[int]) -> list[float]:
    ctx = list(context)
    model.check_window(len(ctx) + len(tokens))
    out = []
    for tok in tokens:
        out.append(float(model.next_ranking(ctx).log_probs[tok]))
        ctx.append(tok)
    return out


def score(model: LanguageModel, tokens: Sequence[int], context: Sequence[int] = ()) -> PlausibilityScore:
    """Natural-log probability of ``tokens`` after ``context``."""
    return PlausibilityScore(
        math.fsum(token_log_probs(model, tokens, context)), len(tokens), model.fingerprint
    )


# --- rank histogram ----------------------------------------------------------


@dataclass
class RankHistogram:
    exact: np.ndarray  # exact[r-1] = count of rank r for r <= EXACT_RANKS
    buckets: list[tuple[int, int, int]]  # (first_rank, last_rank, count)
    total: int
    prob_sums: np.ndarray  # summed probability of tokens at each exact rank

    def count(self, rank: int) -> int:
        if rank <= len(self.exact):
            return int(self.exact[rank - 1])
        for lo, hi, c in self.buckets:
            if lo <= rank <= hi:
                raise ValueError(f"rank {rank} is bucketed in {lo}..{hi} ({c} tokens)")
        return 0

    def mean_prob(self, rank: int) -> float:
        c = int(self.exact[rank - 1])
        return float(self.prob_sums[rank - 1] / c) if c else math.nan

    def share(self, rank: int) -> float:
        return self.count(rank) / self.total if self.total else math.nan

    def rows(self) -> list[tuple[int, int, int, float]]:
        """(first_rank, last_rank, count, mean_prob) rows; mean_prob is nan for buckets."""
        out = [(r, r, int(c), self.mean_prob(r)) for r, c in enumerate(self.exact, start=1)]
        out.extend((lo, hi, c, math.nan) for lo, hi, c in self.buckets)
        return out


def tail_buckets(vocab_size: int, exact: int = EXACT_RANKS) -> list[tuple[int, int]]:
    """Doubling buckets covering ranks exact+1..vocab_size."""
    out = []
    lo = exact + 1
    width = exact
    while lo <= vocab_size:
        hi = min(lo + width - 1, vocab_size)
        out.append((lo, hi))
        lo = hi + 1
        width *= 2
    return out


def rank_histogram(
    model: LanguageModel, corpus: Iterable[Sequence[int]], context: Sequence[int] = ()
) -> RankHistogram:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus must not be empty")
    n_exact = min(EXACT_RANKS, model.vocab_size)
    exact = np.zeros(n_exact, dtype=np.int64)
    prob_sums = np.zeros(n_exact, dtype=np.float64)
    edges = tail_buckets(model.vocab_size, n_exact)
    bucket_counts = [0] * len(edges)
    starts = [lo for lo, _ in edges]
    total = 0
    for seq in corpus:
        ctx = list(context)
        model.check_window(len(ctx) + len(seq))
        for tok in seq:
            ranking = model.next_ranking(ctx)
            r = ranking.rank_of(tok)
            if r <= n_exact:
                exact[r - 1] += 1
                prob_sums[r - 1] += ranking.probs[tok]
            else:
                bucket_counts[np.searchsorted(starts, r, side="right") - 1] += 1
            total += 1
            ctx.append(tok)
    buckets = [(lo, hi, c) for (lo, hi), c in zip(edges, bucket_counts)]
    return RankHistogram(exact, buckets, total, prob_sums)


# --- positional profile -----------------------------------------------------

PROFILE_QUANTILES = (20, 25, 50, 75, 80)


@dataclass
class PositionalRankProfile:
    ranks: np.ndarray  # (n_sequences, length)
    p20: np.ndarray = field(init=False)
    p25: np.ndarray = field(init=False)
    median: np.ndarray = field(init=False)
    p75: np.ndarray = field(init=False)
    p80: np.ndarray = field(init=False)
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        q = np.percentile(self.ranks, PROFILE_QUANTILES, axis=0)
        self.p20, self.p25, self.median, self.p75, self.p80 = q
        self.mean = self.ranks.mean(axis=0)

    @property
    def length(self) -> int:
        return self.ranks.shape[1]

    def rows(self) -> list[tuple[int, float, float, float, float, float, float]]:
        return [
            (i + 1, self.p20[i], self.p25[i], self.median[i], self.p75[i], self.p80[i], self.mean[i])
            for i in range(self.length)
        ]


def positional_profile(
    model: LanguageModel, corpus: Sequence[Sequence[int]], context: Sequence[int] = ()
) -> PositionalRankProfile:
    if not corpus:
        raise ValueError("corpus must not be empty")
    lengths = {len(seq) for seq in corpus}
    if len(lengths) != 1:
        raise LengthMismatch(f"sequences must share one token length, got {sorted(lengths)}")
    rows = [extract_ranks(model, seq, context).ranks for seq in corpus]
    return PositionalRankProfile(np.asarray(rows, dtype=np.float64).reshape(len(rows), -1))


# --- distinguisher ------------------------------------------------------------


def distinguish(
    model: LanguageModel, candidates: Sequence[str], context: Sequence[int] | None = None
) -> tuple[int, list[PlausibilityScore]]:
    """Index of the most probable candidate (first wins on ties) and all scores."""
    if len(candidates) < 2:
        raise ValueError("need at least two candidates")
    ctx = default_context(model) if context is None else list(context)
    token_lists = [model.tokenize(c) for c in candidates]
    lengths = {len(t) for t in token_lists}
    if len(lengths) != 1:
        raise LengthMismatch(f"candidates differ in token length: {[len(t) for t in token_lists]}")
    scores = [score(model, toks, ctx) for toks in token_lists]
    best = max(range(len(scores)), key=lambda i: (scores[i].log_prob, -i))
    return best, scores


# --- corpus report ------------------------------------------------------------


def truncate_tokens(model: LanguageModel, text: str, n: int) -> list[int] | None:
    """First ``n`` tokens of ``text`` if they survive a detokenize/tokenize trip."""
    toks = list(model.tokenize(text))
    if len(toks) < n:
        return None
    head = toks[:n]
    if list(model.tokenize(model.detokenize(head))) != head:
        return None
    return head


def ascii_baseline(model: LanguageModel, n: int, rng: random.Random) -> list[int]:
    """Uniform printable characters, cut to ``n`` tokens."""
    chars = n * 2
    while True:
        toks = list(model.tokenize("".join(rng.choice(PRINTABLE) for _ in range(chars))))
        if len(toks) >= n:
            return toks[:n]
        chars *= 2


def words_baseline(model: LanguageModel, n: int, rng: random.Random, words: Sequence[str]) -> list[int]:
    """Uniform draws from ``words``, space-joined, cut to ``n`` tokens."""
    count = n
    while True:
        toks = list(model.tokenize(" ".join(rng.choice(words) for _ in range(count))))
        if len(toks) >= n:
            return toks[:n]
        count *= 2


@dataclass(frozen=True)
class ReportRow:
    id: str
    role: str  # real | stego | baseline-ascii | baseline-words
    key_id: str
    token_count: int
    log_prob: float
    scorer: str = "primary"


@dataclass
class CorpusReport:
    rows: list[ReportRow]
    token_length: int
    skipped: int = 0

    def by_role(self, role: str, scorer: str = "primary") -> list[float]:
        return [r.log_prob for r in self.rows if r.role == role and r.scorer == scorer]

    def summary(self) -> list[tuple[str, str, int, float, float, float, float, float, float, float]]:
        """(scorer, role, n, min, p5, p25, p50, p75, p95, max) per role."""
        out = []
        keys = sorted({(r.scorer, r.role) for r in self.rows})
        for scorer, role in keys:
            vals = np.asarray(self.by_role(role, scorer))
            q = np.percentile(vals, [0, 5, 25, 50, 75, 95, 100])
            out.append((scorer, role, len(vals), *map(float, q)))
        return out

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("id\trole\tkey_id\tscorer\ttoken_count\tlog_prob\n")
        for r in self.rows:
            buf.write(f"{r.id}\t{r.role}\t{r.key_id}\t{r.scorer}\t{r.token_count}\t{r.log_prob!r}\n")
        buf.write("\n# summary\tscorer\trole\tn\tmin\tp5\tp25\tp50\tp75\tp95\tmax\n")
        for scorer, role, n, *q in self.summary():
            buf.write("# summary\t" + "\t".join([scorer, role, str(n), *(repr(x) for x in q)]) + "\n")
        if self.skipped:
            buf.write(f"# skipped\t{self.skipped}\n")
        return buf.getvalue()


def stego_rows(
    model: LanguageModel,
    original_id: str,
    original: Sequence[int],
    keys: Sequence[tuple[str, StegoKey]],
    scorers: Sequence[tuple[str, LanguageModel]],
) -> list[ReportRow]:
    """Encode one original under every key and score each stegotext.

    Stegotexts are scored as token sequences, so the report stays defined
    for tokenizers whose text round trip is unstable.
    """
    text = model.detokenize(original)
    rows = []
    for key_id, key in keys:
        stego, _ = encode_detailed(model, text, replace(key, token_transport=True))
        for scorer_id, scorer in scorers:
            s = score(scorer, stego.tokens, default_context(scorer))
            rows.append(ReportRow(original_id, "stego", key_id, s.token_count, s.log_prob, scorer_id))
    return rows


def corpus_report(
    model: LanguageModel,
    real_texts: Sequence[str],
    originals: Sequence[int],
    keys: Sequence[tuple[str, StegoKey]],
    token_length: int = 85,
    n_baseline: int = 100,
    seed: int = 0,
    scoring_model: LanguageModel | None = None,
    words: Sequence[str] | None = None,
    pool=None,
) -> CorpusReport:
    """Score real texts, stegotexts of selected originals, and random baselines.

    ``originals`` are indices into ``real_texts``. ``scoring_model``, when
    given, scores every text a second time under the ``cross`` scorer id.
    ``pool`` is an optional executor whose workers were started with
    :func:`init_worker`; stego shards are merged back in input order.
    """
    scorers = [("primary", model)]
    if scoring_model is not None:
        scorers.append(("cross", scoring_model))
    rows: list[ReportRow] = []
    truncated: dict[int, list[int]] = {}
    skipped = 0
    for i, text in enumerate(real_texts):
        toks = truncate_tokens(model, text, token_length)
        if toks is None:
            skipped += 1
            continue
        truncated[i] = toks
        for scorer_id, scorer in scorers:
            s = score(scorer, toks, default_context(scorer))
            rows.append(ReportRow(f"real-{i}", "real", "-", s.token_count, s.log_prob, scorer_id))

    picked = [i for i in originals if i in truncated]
    if pool is None:
        chunks = [stego_rows(model, f"real-{i}", truncated[i], keys, scorers) for i in picked]
    else:
        chunks = pool.map(_worker_stego_rows, [(f"real-{i}", truncated[i], keys) for i in picked])
    for chunk in chunks:
        rows.extend(chunk)

    rng = random.Random(seed)
    words = bundled_words() if words is None else words
    for b in range(n_baseline):
        for role, toks in (
            ("baseline-ascii", ascii_baseline(model, token_length, rng)),
            ("baseline-words", words_baseline(model, token_length, rng, words)),
        ):
            for scorer_id, scorer in scorers:
                s = score(scorer, toks, default_context(scorer))
                rows.append(ReportRow(f"{role}-{b}", role, "-", s.token_count, s.log_prob, scorer_id))
    return CorpusReport(rows, token_length, skipped)


_WORKER: dict = {}


def init_worker(load_models, *args) -> None:
    """Process-pool initializer: ``load_models(*args)`` -> (model, scoring_model or None)."""
    model, cross = load_models(*args)
    scorers = [("primary", model)]
    if cross is not None:
        scorers.append(("cross", cross))
    _WORKER["model"] = model
    _WORKER["scorers"] = scorers


def _worker_stego_rows(job) -> list[ReportRow]:
    original_id, toks, keys = job
    return stego_rows(_WORKER["model"], original_id, toks, keys, _WORKER["scorers"])


def pick_originals(real_scores: Sequence[float]) -> list[int]:
    """Indices of the texts closest to mean, mean - 2 sd and mean + 2 sd of log-probs."""
    vals = np.asarray(real_scores, dtype=np.float64)
    mu, sd = vals.mean(), vals.std()
    out = []
    for target in (mu, mu - 2 * sd, mu + 2 * sd):
        out.append(int(np.argmin(np.abs(vals - target))))
    return out
