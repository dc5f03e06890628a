"""Exception hierarchy. ``exit_code`` is the stable CLI contract."""

from __future__ import annotations


class RankStegoError(Exception):
    exit_code = 1


class BackendUnavailable(RankStegoError):
    pass


class EncodingError(RankStegoError):
    """Text cannot be represented in the model's input encoding."""


class FingerprintMismatch(RankStegoError):
    exit_code = 3


class ContextOverflow(RankStegoError):
    exit_code = 4


class NondeterminismDetected(RankStegoError):
    exit_code = 7


class TokenOutOfRange(RankStegoError):
    pass


class RankOutOfRange(RankStegoError):
    exit_code = 5


class RetokenizationUnstable(RankStegoError):
    exit_code = 2

    def __init__(self, position: int, expected: int | None, got: int | None):
        self.position = position
        self.expected = expected
        self.got = got
        super().__init__(
            f"stegotext does not re-tokenize to the emitted tokens "
            f"(first difference at position {position}: expected {expected}, got {got})"
        )


class LengthMismatch(RankStegoError):
    exit_code = 6


# vocabulary bridge


class Unbridgeable(RankStegoError):
    pass


class RemapAmbiguity(RankStegoError):
    pass


class TruncatedCode(RankStegoError):
    pass


class MalformedDigit(RankStegoError):
    pass


class EmptyContext(RankStegoError):
    """The backend cannot rank a first token without any context."""
