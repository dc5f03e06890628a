"""Command-line interface.

Secret prompts are read from files or environment variables, never from
argv. Exit codes: 0 ok, 1 other error, 2 RetokenizationUnstable,
3 FingerprintMismatch, 4 ContextOverflow, 5 RankOutOfRange,
6 LengthMismatch, 7 NondeterminismDetected.
"""

from __future__ import annotations

import argparse
import logging
import os
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analyzer, bridge
from .codec import DEFAULT_PAD_LEN, StegoKey, StegoText, decode, encode_detailed
from .errors import FingerprintMismatch, NondeterminismDetected, RankStegoError
from .model import BigramModel, LanguageModel, RSBG_MAGIC, bundled_corpus, probe_determinism
from .relay import RelayEnvelope, relay_pack, relay_unpack

log = logging.getLogger("rankstego")

MODEL_ENV = "RANKSTEGO_MODEL"
DEFAULT_WARN_MEAN_RANK = 20.0


def read_text(path: str | Path) -> str:
    # strict UTF-8: invalid bytes are rejected rather than transcoded
    return Path(path).read_bytes().decode("utf-8")


def read_lines(path: str | Path) -> list[str]:
    return [line for line in read_text(path).splitlines() if line]


def write_out(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_bytes(text.encode("utf-8"))


def read_secret(path: str | None, env: str, required: bool) -> str | None:
    if path:
        return read_text(path).rstrip("\n")
    if env in os.environ:
        return os.environ[env]
    if required:
        raise SystemExit(f"error: provide the prompt with a file option or ${env}")
    return None


# --- model loading --------------------------------------------------------------


def load_model_source(corpus: str | None, model: str | None, smoothing: float,
                      backend_config: str, context_window: int | None) -> LanguageModel:
    kw = {} if context_window is None else {"context_window": context_window}
    if corpus and model:
        raise SystemExit("error: set exactly one of --corpus and --model")
    if corpus:
        text = bundled_corpus() if corpus == "builtin" else read_text(corpus)
        return BigramModel.from_corpus(text, smoothing, **kw)
    model = model or os.environ.get(MODEL_ENV)
    if not model:
        return BigramModel.from_corpus(bundled_corpus(), smoothing, **kw)
    path = Path(model)
    if path.is_file():
        with open(path, "rb") as fh:
            if fh.read(4) == RSBG_MAGIC:
                return BigramModel.load(path, **kw)
    from .hf import HFCausalLM

    hf = HFCausalLM(path, backend_config)
    if context_window is not None:
        hf.context_window = context_window
    return hf


def load_model(args) -> LanguageModel:
    return load_model_source(args.corpus, args.model, args.smoothing, args.backend_config, args.context_window)


def _model_args(args) -> tuple:
    return (args.corpus, args.model, args.smoothing, args.backend_config, args.context_window)


def _load_report_models(source: tuple, cross: tuple | None):
    model = load_model_source(*source)
    return model, (load_model_source(*cross) if cross else None)


def context_tokens(model: LanguageModel, path: str | None) -> list[int]:
    if path is None:
        return analyzer.default_context(model)
    return analyzer.default_context(model) + list(model.tokenize(read_text(path)))


# --- commands -----------------------------------------------------------------


def cmd_keygen(args) -> int:
    model = load_model(args)
    k = read_secret(args.k_file, "RANKSTEGO_K", required=True)
    k_prime = read_secret(args.k_prime_file, "RANKSTEGO_K_PRIME", required=False)
    if args.nonce:
        rng = random.Random(args.seed) if args.seed is not None else random.SystemRandom()
        k = f"{k} [{rng.randrange(10**9, 10**10)}]"
    bos = model.bos_token_id is not None if args.bos is None else args.bos
    key = StegoKey(k=k, k_prime=k_prime, pad_len=args.pad_len, bos_policy=bos,
                   model_fingerprint=model.fingerprint, token_transport=args.token_transport,
                   allow_empty_k=args.allow_empty_k)
    key.save(args.output)
    log.info("wrote key for model %s", model.fingerprint[:16])
    return 0


def cmd_encode(args) -> int:
    model = load_model(args)
    key = StegoKey.load(args.key)
    stego, ranks = encode_detailed(model, read_text(args.input), key)
    if len(ranks) and ranks.mean() > args.warn_mean_rank:
        log.warning("mean rank %.1f exceeds %.1f: the message is hard for this model to "
                    "predict and the stegotext is likely to read poorly", ranks.mean(), args.warn_mean_rank)
    if stego.tokens[: len(stego.tokens) - key.pad_len] == tuple(model.tokenize(read_text(args.input))):
        log.warning("stegotext repeats the message: k and k' leave the model in the same state")
    if args.output in (None, "-"):
        if key.token_transport:
            sys.stdout.write("".join(f"{t}\n" for t in stego.tokens))
        else:
            sys.stdout.write(stego.text)
    else:
        stego.to_file(args.output, key.token_transport)
    return 0


def cmd_decode(args) -> int:
    model = load_model(args)
    key = StegoKey.load(args.key)
    stego = StegoText.from_file(args.input, key)
    write_out(decode(model, stego, key), args.output)
    return 0


def cmd_analyze(args) -> int:
    model = load_model(args)
    ctx = context_tokens(model, args.context_file)
    sub = args.analysis
    out = []
    if sub == "score":
        out.append("id\ttoken_count\tlog_prob\n")
        for i, text in enumerate(read_lines(args.input)):
            s = analyzer.score(model, model.tokenize(text), ctx)
            out.append(f"{i}\t{s.token_count}\t{s.log_prob!r}\n")
    elif sub == "distinguish":
        best, scores = analyzer.distinguish(model, read_lines(args.input), ctx)
        out.append("id\ttoken_count\tlog_prob\n")
        out.extend(f"{i}\t{s.token_count}\t{s.log_prob!r}\n" for i, s in enumerate(scores))
        out.append(f"# winner\t{best}\n")
    elif sub == "hist":
        corpus = [model.tokenize(t) for t in read_lines(args.input)]
        hist = analyzer.rank_histogram(model, corpus, ctx)
        out.append("first_rank\tlast_rank\tcount\tmean_prob\n")
        out.extend(f"{lo}\t{hi}\t{c}\t{p!r}\n" for lo, hi, c, p in hist.rows())
        out.append(f"# total\t{hist.total}\n")
    elif sub == "profile":
        corpus = [list(model.tokenize(t)) for t in read_lines(args.input)]
        if args.length is not None:
            corpus = [seq[: args.length] for seq in corpus if len(seq) >= args.length]
        prof = analyzer.positional_profile(model, corpus, ctx)
        out.append("position\tp20\tp25\tmedian\tp75\tp80\tmean\n")
        out.extend("\t".join([str(r[0]), *(repr(float(x)) for x in r[1:])]) + "\n" for r in prof.rows())
    elif sub == "report":
        if not args.prompts:
            raise SystemExit("error: report needs --prompts")
        return _report(args, model)
    write_out("".join(out), args.output)
    return 0


def _report(args, model: LanguageModel) -> int:
    length = args.length or 85
    real = read_lines(args.input)
    prompts = read_lines(args.prompts)
    keys = [(f"key-{i}", StegoKey(k=p, model_fingerprint=model.fingerprint, pad_len=0,
                                  bos_policy=model.bos_token_id is not None))
            for i, p in enumerate(prompts)]
    cross_src = None
    cross = None
    if args.cross_model:
        cross_src = (None, args.cross_model, args.smoothing, args.cross_backend_config, None)
        cross = load_model_source(*cross_src)
    if args.originals == "auto":
        scored = []
        for text in real:
            toks = analyzer.truncate_tokens(model, text, length)
            scored.append(-float("inf") if toks is None else
                          analyzer.score(model, toks, analyzer.default_context(model)).log_prob)
        finite = [i for i, s in enumerate(scored) if s != -float("inf")]
        picked = analyzer.pick_originals([scored[i] for i in finite])
        originals = [finite[i] for i in picked]
    else:
        originals = [int(x) for x in args.originals.split(",") if x]
    common = dict(token_length=length, n_baseline=args.baselines, seed=args.seed, scoring_model=cross)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs, initializer=analyzer.init_worker,
                                 initargs=(_load_report_models, _model_args(args), cross_src)) as pool:
            report = analyzer.corpus_report(model, real, originals, keys, pool=pool, **common)
    else:
        report = analyzer.corpus_report(model, real, originals, keys, **common)
    write_out(report.to_tsv(), args.output)
    return 0


def _read_ranks(path: str) -> list[int]:
    return [int(x) for x in read_text(path).split()]


def _write_ranks(ranks, path: str | None) -> None:
    write_out("".join(f"{r}\n" for r in ranks), path)


def cmd_bridge(args) -> int:
    sub = args.bridge
    if sub == "plan":
        v_enc, v_dec = args.ranks if len(args.ranks) == 2 else (args.v_enc, args.v_dec)
        plan = bridge.plan_remap(v_enc, v_dec)
        if plan.is_identity:
            print(f"L={plan.direct_limit} B=0 identity")
        else:
            print(f"L={plan.direct_limit} B={plan.block_size} block={plan.block.start}..{plan.block.stop - 1}")
    elif sub in ("remap", "unremap"):
        plan = bridge.plan_remap(args.v_enc, args.v_dec)
        ranks = args.ranks if args.ranks else _read_ranks(args.input)
        fn = bridge.remap_stream if sub == "remap" else bridge.unremap_stream
        print(" ".join(map(str, fn(plan, ranks))))
    elif sub == "table":
        model = load_model(args)
        corpus = [model.tokenize(t) for t in read_lines(args.input)]
        bridge.build_rank_table(model, corpus, context_tokens(model, args.context_file)).save(args.output)
    elif sub == "recode":
        if not (args.src_table and args.dst_table and args.input):
            raise SystemExit("error: recode needs --src-table, --dst-table and --input")
        src = bridge.RankFrequencyTable.load(args.src_table)
        dst = bridge.RankFrequencyTable.load(args.dst_table)
        ranks = _read_ranks(args.input)
        if args.inverse:
            _write_ranks(bridge.arithmetic_unrecode(ranks, src, dst), args.output)
        else:
            _write_ranks(bridge.arithmetic_recode(ranks, src, dst), args.output)
    return 0


def cmd_relay(args) -> int:
    model = load_model(args)
    if args.relay == "pack":
        env = relay_pack(model, read_text(args.request), read_text(args.trace), read_text(args.answer),
                         args.pad_len, bos_policy=args.bos)
        write_out(env.to_text(), args.output)
    else:
        write_out(relay_unpack(model, RelayEnvelope.load(args.input), bos_policy=args.bos), args.output)
    return 0


def cmd_model(args) -> int:
    model = load_model(args)
    if args.model_cmd == "build":
        if not isinstance(model, BigramModel):
            raise SystemExit("error: only reference models can be serialized")
        model.save(args.output)
    print(model.fingerprint)
    return 0


def cmd_selftest(args) -> int:
    failures: list[int] = []

    def line(ok: bool, name: str, detail: str = "", code: int = 1) -> None:
        print(f"{'PASS' if ok else 'FAIL'}\t{name}" + (f"\t{detail}" if detail else ""))
        if not ok:
            failures.append(code)

    try:
        model = load_model(args)
    except RankStegoError as exc:
        line(False, "load", str(exc), exc.exit_code)
        return failures[0]
    line(True, "load", model.fingerprint)

    expected = args.expect_fingerprint
    if args.key:
        expected = StegoKey.load(args.key).model_fingerprint
    if expected:
        ok = expected == model.fingerprint
        line(ok, "fingerprint", "" if ok else str(FingerprintMismatch(
            f"expected {expected[:16]}..., loaded {model.fingerprint[:16]}...")), FingerprintMismatch.exit_code)

    try:
        digest = probe_determinism(model, repeats=args.repeats)
        line(True, "determinism", f"{args.repeats} probes, digest {digest[:16]}")
    except NondeterminismDetected as exc:
        line(False, "determinism", str(exc), exc.exit_code)

    samples = [s for s in bundled_corpus().splitlines()[:20] if s]
    bad = [i for i, s in enumerate(samples) if model.detokenize(model.tokenize(s)) != s]
    line(not bad, "tokenizer", f"{len(samples)} samples" if not bad else f"unstable samples {bad}")

    ref = BigramModel.from_corpus(bundled_corpus())
    key = StegoKey(k="A short note:", model_fingerprint=ref.fingerprint)
    bad = []
    for i, s in enumerate(samples):
        stego, _ = encode_detailed(ref, s, key)
        if decode(ref, stego, key) != s:
            bad.append(i)
    line(not bad, "reference-roundtrip", f"{len(samples)} messages" if not bad else f"failed {bad}")

    if not failures:
        return 0
    return NondeterminismDetected.exit_code if NondeterminismDetected.exit_code in failures else failures[0]


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    model_opts = argparse.ArgumentParser(add_help=False)
    g = model_opts.add_argument_group("model")
    g.add_argument("--corpus", help="build the reference bigram model from this UTF-8 corpus ('builtin' for the bundled one)")
    g.add_argument("--model", help=f"serialized reference model (.rsbg) or transformers model directory; default ${MODEL_ENV}")
    g.add_argument("--smoothing", type=float, default=1.0)
    g.add_argument("--backend-config", default="", help="backend options, e.g. 'dtype=float32;device=cpu'")
    g.add_argument("--context-window", type=int)

    p = argparse.ArgumentParser(prog="rankstego", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("keygen", parents=[model_opts], help="write a key file")
    s.add_argument("--k-file", help="file holding the secret prompt k (or $RANKSTEGO_K)")
    s.add_argument("--k-prime-file", help="file holding the context prompt k' (or $RANKSTEGO_K_PRIME)")
    s.add_argument("--pad-len", type=int, default=DEFAULT_PAD_LEN)
    s.add_argument("--bos", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--token-transport", action="store_true", help="ship token ids instead of text")
    s.add_argument("--allow-empty-k", action="store_true")
    s.add_argument("--nonce", action="store_true", help="append a random bracketed number to k")
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_keygen)

    for name, func in (("encode", cmd_encode), ("decode", cmd_decode)):
        s = sub.add_parser(name, parents=[model_opts], help=f"{name} a message")
        s.add_argument("input")
        s.add_argument("--key", required=True)
        s.add_argument("-o", "--output")
        if name == "encode":
            s.add_argument("--warn-mean-rank", type=float, default=DEFAULT_WARN_MEAN_RANK)
        s.set_defaults(func=func)

    s = sub.add_parser("analyze", parents=[model_opts], help="plausibility and rank statistics")
    s.add_argument("analysis", choices=["score", "hist", "profile", "report", "distinguish"])
    s.add_argument("input", help="UTF-8 file, one text per line")
    s.add_argument("--context-file")
    s.add_argument("--length", type=int, help="token length (profile truncation, report length)")
    s.add_argument("--prompts", help="report: file with one secret prompt per line")
    s.add_argument("--originals", default="auto", help="report: comma-separated line indices or 'auto'")
    s.add_argument("--baselines", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--cross-model", help="report: second scoring model")
    s.add_argument("--cross-backend-config", default="")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("bridge", parents=[model_opts], help="vocabulary bridging")
    s.add_argument("bridge", choices=["plan", "remap", "unremap", "table", "recode"])
    s.add_argument("ranks", nargs="*", type=int)
    s.add_argument("--v-enc", type=int, default=100_000)
    s.add_argument("--v-dec", type=int, default=60_000)
    s.add_argument("--input", "-i")
    s.add_argument("--context-file")
    s.add_argument("--src-table")
    s.add_argument("--dst-table")
    s.add_argument("--inverse", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_bridge)

    s = sub.add_parser("relay", parents=[model_opts], help="pack or unpack a relay envelope")
    s.add_argument("relay", choices=["pack", "unpack"])
    s.add_argument("input", nargs="?", help="unpack: envelope file")
    s.add_argument("--request", help="pack: file with the user request c")
    s.add_argument("--trace", help="pack: file with the reasoning trace t")
    s.add_argument("--answer", help="pack: file with the answer u to hide")
    s.add_argument("--pad-len", type=int, default=DEFAULT_PAD_LEN)
    s.add_argument("--bos", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_relay)

    s = sub.add_parser("model", parents=[model_opts], help="print a model fingerprint or serialize a reference model")
    s.add_argument("model_cmd", choices=["fingerprint", "build"])
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_model)

    s = sub.add_parser("selftest", parents=[model_opts], help="backend diagnostics")
    s.add_argument("--key", help="check the model against this key's fingerprint")
    s.add_argument("--expect-fingerprint")
    s.add_argument("--repeats", type=int, default=10)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except RankStegoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (UnicodeDecodeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
