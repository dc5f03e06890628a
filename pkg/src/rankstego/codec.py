"""Rank-stream steganography.

A message is turned into the ranks its tokens occupy under the model
(optionally after a context prompt ``k_prime``); the stegotext is then
generated after the secret prompt ``k`` by picking, at every step, the token
at the recorded rank. Decoding runs the same two steps with the prompts
swapped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import FingerprintMismatch, RetokenizationUnstable
from .model import LanguageModel, TokenSequence

DEFAULT_PAD_LEN = 5
KEY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RankSequence:
    ranks: tuple[int, ...]
    source_fingerprint: str

    def __len__(self) -> int:
        return len(self.ranks)

    def __iter__(self):
        return iter(self.ranks)

    def __getitem__(self, i):
        return self.ranks[i]

    def mean(self) -> float:
        return sum(self.ranks) / len(self.ranks) if self.ranks else math.nan


@dataclass(repr=False)
class StegoKey:
    k: str
    model_fingerprint: str
    k_prime: str | None = None
    pad_len: int = DEFAULT_PAD_LEN
    bos_policy: bool = False
    token_transport: bool = False
    format_version: int = KEY_FORMAT_VERSION
    allow_empty_k: bool = False

    def __post_init__(self):
        if not isinstance(self.pad_len, int) or self.pad_len < 0:
            raise ValueError("pad_len must be a non-negative integer")
        if not self.k and not self.allow_empty_k:
            raise ValueError("empty secret prompt k requires allow_empty_k")
        if self.format_version != KEY_FORMAT_VERSION:
            raise ValueError(f"unsupported key format version {self.format_version}")

    def __repr__(self) -> str:
        # never print the prompts
        return (
            f"StegoKey(k=<{len(self.k)} chars>, k_prime="
            f"{'None' if self.k_prime is None else f'<{len(self.k_prime)} chars>'}, "
            f"pad_len={self.pad_len}, bos_policy={self.bos_policy}, "
            f"token_transport={self.token_transport}, model_fingerprint={self.model_fingerprint[:12]}...)"
        )

    def to_text(self) -> str:
        doc = {
            "k": self.k,
            "k_prime": self.k_prime,
            "pad_len": self.pad_len,
            "bos_policy": self.bos_policy,
            "model_fingerprint": self.model_fingerprint,
            "token_transport": self.token_transport,
            "format_version": self.format_version,
        }
        if self.allow_empty_k:
            doc["allow_empty_k"] = True
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_text(cls, text: str) -> StegoKey:
        doc = json.loads(text)
        known = {"k", "k_prime", "pad_len", "bos_policy", "model_fingerprint",
                 "token_transport", "format_version", "allow_empty_k"}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown key fields: {sorted(extra)}")
        return cls(**doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> StegoKey:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass
class StegoText:
    text: str
    token_count: int
    key_fingerprint: str
    tokens: tuple[int, ...] | None = field(default=None, repr=False)

    def to_file(self, path: str | Path, token_transport: bool = False) -> None:
        path = Path(path)
        if token_transport:
            if self.tokens is None:
                raise ValueError("stegotext carries no token ids")
            path.write_text("".join(f"{t}\n" for t in self.tokens), encoding="utf-8")
        else:
            path.write_bytes(self.text.encode("utf-8"))

    @classmethod
    def from_file(cls, path: str | Path, key: StegoKey) -> StegoText:
        raw = Path(path).read_bytes().decode("utf-8")  # strict: reject invalid bytes
        if key.token_transport:
            tokens = tuple(int(line) for line in raw.split())
            return cls("", len(tokens), key.model_fingerprint, tokens)
        return cls(raw, -1, key.model_fingerprint)


def check_fingerprint(model: LanguageModel, expected: str) -> None:
    if expected != model.fingerprint:
        raise FingerprintMismatch(
            f"model fingerprint {model.fingerprint[:16]}... does not match {expected[:16]}..."
        )


def build_context(model: LanguageModel, prompt: str | None, bos_policy: bool = False) -> list[int]:
    """The single routine through which every codec context is built."""
    tokens = list(model.tokenize(prompt)) if prompt else []
    if bos_policy:
        if model.bos_token_id is None:
            raise ValueError("bos_policy is set but the model has no begin-of-sequence token")
        tokens.insert(0, model.bos_token_id)
    return tokens


def extract_ranks(model: LanguageModel, message: Sequence[int], context: Sequence[int]) -> RankSequence:
    ctx = list(context)
    model.check_window(len(ctx) + len(message))
    ranks = []
    for tok in message:
        ranks.append(model.next_ranking(ctx).rank_of(tok))
        ctx.append(tok)
    return RankSequence(tuple(ranks), model.fingerprint)


def emit_by_ranks(model: LanguageModel, ranks: Sequence[int], context: Sequence[int]) -> TokenSequence:
    ctx = list(context)
    model.check_window(len(ctx) + len(ranks))
    out = TokenSequence(fingerprint=model.fingerprint)
    for r in ranks:
        tok = model.next_ranking(ctx).token_at_rank(r)
        out.append(tok)
        ctx.append(tok)
    return out


def pad_message(model: LanguageModel, message: Sequence[int], context: Sequence[int], pad_len: int) -> TokenSequence:
    """Append ``pad_len`` greedy tokens so the stegotext ends on fluent text."""
    if pad_len < 0:
        raise ValueError("pad_len must be non-negative")
    model.check_window(len(context) + len(message) + pad_len)
    tail = model.greedy([*context, *message], pad_len)
    return TokenSequence([*message, *tail], model.fingerprint)


def first_difference(a: Sequence[int], b: Sequence[int]) -> int | None:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None if len(a) == len(b) else min(len(a), len(b))


def encode_detailed(model: LanguageModel, plaintext: str, key: StegoKey) -> tuple[StegoText, RankSequence]:
    """Like :func:`encode`, also returning the rank stream (useful for diagnostics)."""
    check_fingerprint(model, key.model_fingerprint)
    message = model.tokenize(plaintext)
    msg_ctx = build_context(model, key.k_prime, key.bos_policy)
    padded = pad_message(model, message, msg_ctx, key.pad_len)
    ranks = extract_ranks(model, padded, msg_ctx)
    stego_ctx = build_context(model, key.k, key.bos_policy)
    s_tokens = emit_by_ranks(model, ranks.ranks, stego_ctx)
    tokens = tuple(s_tokens)
    if key.token_transport:
        return StegoText("", len(tokens), model.fingerprint, tokens), ranks
    text = model.detokenize(s_tokens)
    again = model.tokenize(text)
    pos = first_difference(s_tokens, again)
    if pos is not None:
        expected = s_tokens[pos] if pos < len(s_tokens) else None
        got = again[pos] if pos < len(again) else None
        raise RetokenizationUnstable(pos, expected, got)
    return StegoText(text, len(tokens), model.fingerprint, tokens), ranks


def encode(model: LanguageModel, plaintext: str, key: StegoKey) -> StegoText:
    return encode_detailed(model, plaintext, key)[0]


def decode(model: LanguageModel, stego: StegoText, key: StegoKey) -> str:
    check_fingerprint(model, key.model_fingerprint)
    if stego.key_fingerprint and stego.key_fingerprint != model.fingerprint:
        raise FingerprintMismatch("stegotext is bound to a different model")
    if key.token_transport:
        if stego.tokens is None:
            raise ValueError("key requires token transport but stegotext carries no token ids")
        s_tokens = list(stego.tokens)
    else:
        s_tokens = list(model.tokenize(stego.text))
        if stego.tokens is not None:
            pos = first_difference(stego.tokens, s_tokens)
            if pos is not None:
                raise RetokenizationUnstable(
                    pos,
                    stego.tokens[pos] if pos < len(stego.tokens) else None,
                    s_tokens[pos] if pos < len(s_tokens) else None,
                )
    stego_ctx = build_context(model, key.k, key.bos_policy)
    ranks = extract_ranks(model, s_tokens, stego_ctx)
    msg_ctx = build_context(model, key.k_prime, key.bos_policy)
    padded = emit_by_ranks(model, ranks.ranks, msg_ctx)
    message = padded[: max(0, len(padded) - key.pad_len)]
    return model.detokenize(message)
