"""Adapter for local Hugging Face causal language models.

Loaded from a directory holding weights and tokenizer files. The
configuration string is ``key=value`` pairs separated by ``;``:
``dtype`` (float32, bfloat16, float16), ``device`` (cpu, cuda, ...),
``context_window`` and ``threads``. It is part of the fingerprint.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BackendUnavailable, EmptyContext, EncodingError
from .model import LanguageModel, NextTokenRanking, TokenSequence, probe_determinism


def parse_config(config: str) -> dict[str, str]:
    out = {}
    for part in filter(None, (p.strip() for p in config.split(";"))):
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"malformed backend option {part!r}; expected key=value")
        out[key.strip()] = value.strip()
    return out


def fingerprint_files(path: str | Path, config: str) -> str:
    """SHA-256 over every file under ``path`` (sorted by relative name) and ``config``."""
    path = Path(path)
    files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
    h = hashlib.sha256()
    for f in files:
        rel = f.name if f == path else f.relative_to(path).as_posix()
        h.update(rel.encode("utf-8") + b"\0")
        h.update(f.stat().st_size.to_bytes(8, "little"))
        with open(f, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    h.update(b"\0config\0" + config.encode("utf-8"))
    return h.hexdigest()


class HFCausalLM(LanguageModel):
    def __init__(self, path: str | Path, config: str = "", probe: bool = True):
        try:
            import torch
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:
            raise BackendUnavailable(f"transformers backend not installed: {exc}") from None
        opts = parse_config(config)
        unknown = set(opts) - {"dtype", "device", "context_window", "threads"}
        if unknown:
            raise ValueError(f"unknown backend options: {sorted(unknown)}")
        if not Path(path).exists():
            raise BackendUnavailable(f"no model at {path}")

        self._torch = torch
        self.config = config
        self._fingerprint = fingerprint_files(path, config)
        if "threads" in opts:
            torch.set_num_threads(int(opts["threads"]))
        torch.use_deterministic_algorithms(True, warn_only=True)
        self.device = opts.get("device", "cpu")
        dtype = getattr(torch, opts.get("dtype", "float32"))
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(path)
            self.net = AutoModelForCausalLM.from_pretrained(path, dtype=dtype).to(self.device)
        except (OSError, ValueError) as exc:
            raise BackendUnavailable(f"cannot load model from {path}: {exc}") from None
        self.net.eval()
        self.vocab_size = int(self.net.get_output_embeddings().weight.shape[0])
        self.bos_token_id = self.tokenizer.bos_token_id
        cfg = self.net.config
        window = opts.get("context_window") or getattr(cfg, "max_position_embeddings", None) or getattr(cfg, "n_positions")
        self.context_window = int(window)
        if probe:
            probe_determinism(self)

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    def tokenize(self, text: str) -> TokenSequence:
        try:
            ids = self.tokenizer(text, add_special_tokens=False)["input_ids"]
        except UnicodeEncodeError as exc:
            raise EncodingError(str(exc)) from None
        return TokenSequence(ids, self._fingerprint)

    def _detokenize(self, tokens: Sequence[int]) -> str:
        return self.tokenizer.decode(
            list(tokens), skip_special_tokens=False, clean_up_tokenization_spaces=False
        )

    def _next_ranking(self, context: Sequence[int]) -> NextTokenRanking:
        if not len(context):
            raise EmptyContext("set bos_policy or a context prompt: this backend cannot rank without context")
        torch = self._torch
        ids = torch.tensor([list(context)], dtype=torch.long, device=self.device)
        with torch.inference_mode():
            logits = self.net(input_ids=ids).logits[0, -1]
        return NextTokenRanking.from_logits(logits.double().cpu().numpy().astype(np.float64))


def load_from_env(var: str = "RANKSTEGO_HF_MODEL", config_var: str = "RANKSTEGO_HF_CONFIG") -> HFCausalLM | None:
    path = os.environ.get(var)
    if not path:
        return None
    return HFCausalLM(path, os.environ.get(config_var, ""))
