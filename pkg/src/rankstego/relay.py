"""Covert relay: ship an answer ``u`` inside a compliant answer ``s``.

The reasoning trace ``t`` plays the secret prompt and the user request ``c``
plays the context prompt, so packing and unpacking are plain encode/decode
under the key ``{k: t, k_prime: c}``. ``t`` travels in the clear next to ``s``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .codec import DEFAULT_PAD_LEN, StegoKey, StegoText, check_fingerprint, decode, encode
from .model import LanguageModel

ENVELOPE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RelayEnvelope:
    c: str
    t: str
    s: str
    model_fingerprint: str
    pad_len: int = DEFAULT_PAD_LEN
    format_version: int = ENVELOPE_FORMAT_VERSION

    def __post_init__(self):
        if not self.model_fingerprint:
            raise ValueError("envelope needs a model fingerprint")
        if self.pad_len < 0:
            raise ValueError("pad_len must be non-negative")

    def key(self, bos_policy: bool = False) -> StegoKey:
        return relay_key(self.c, self.t, self.model_fingerprint, self.pad_len, bos_policy)

    def to_text(self) -> str:
        doc = {
            "c": self.c,
            "t": self.t,
            "s": self.s,
            "model_fingerprint": self.model_fingerprint,
            "pad_len": self.pad_len,
            "format_version": self.format_version,
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RelayEnvelope:
        doc = json.loads(text)
        if doc.get("format_version") != ENVELOPE_FORMAT_VERSION:
            raise ValueError(f"unsupported envelope version {doc.get('format_version')}")
        return cls(**doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> RelayEnvelope:
        return cls.from_text(Path(path).read_bytes().decode("utf-8"))


def relay_key(c: str, t: str, fingerprint: str, pad_len: int = DEFAULT_PAD_LEN, bos_policy: bool = False) -> StegoKey:
    return StegoKey(k=t, k_prime=c, model_fingerprint=fingerprint, pad_len=pad_len,
                    bos_policy=bos_policy, allow_empty_k=True)


def relay_pack(
    model: LanguageModel, c: str, t: str, u: str, pad_len: int = DEFAULT_PAD_LEN, bos_policy: bool = False
) -> RelayEnvelope:
    stego = encode(model, u, relay_key(c, t, model.fingerprint, pad_len, bos_policy))
    return RelayEnvelope(c, t, stego.text, model.fingerprint, pad_len)


def relay_unpack(model: LanguageModel, envelope: RelayEnvelope, bos_policy: bool = False) -> str:
    check_fingerprint(model, envelope.model_fingerprint)
    stego = StegoText(envelope.s, -1, envelope.model_fingerprint)
    return decode(model, stego, envelope.key(bos_policy))
