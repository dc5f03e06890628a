"""Hide a token sequence in a generated text of the same length via next-token ranks."""

from .codec import (
    RankSequence,
    StegoKey,
    StegoText,
    build_context,
    decode,
    emit_by_ranks,
    encode,
    extract_ranks,
    pad_message,
)
from .model import (
    BigramModel,
    LanguageModel,
    NextTokenRanking,
    TokenSequence,
    build_reference_model,
    default_reference_model,
    fingerprint,
    rank_of,
    token_at_rank,
)

__version__ = "0.1.0"

__all__ = [
    "BigramModel",
    "LanguageModel",
    "NextTokenRanking",
    "RankSequence",
    "StegoKey",
    "StegoText",
    "TokenSequence",
    "build_context",
    "build_reference_model",
    "decode",
    "default_reference_model",
    "emit_by_ranks",
    "encode",
    "extract_ranks",
    "fingerprint",
    "pad_message",
    "rank_of",
    "token_at_rank",
]
