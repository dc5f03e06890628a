import random

import pytest

from conftest import random_printable
from rankstego.codec import StegoText, decode, encode
from rankstego.errors import FingerprintMismatch
from rankstego.relay import RelayEnvelope, relay_key, relay_pack, relay_unpack


def _triple(rng):
    c = random_printable(rng, rng.randint(1, 40))
    t = random_printable(rng, rng.randint(0, 60))
    u = random_printable(rng, rng.randint(0, 120))
    return c, t, u


def test_roundtrip_random_triples(ref_model):
    rng = random.Random(21)
    for _ in range(100):
        c, t, u = _triple(rng)
        env = relay_pack(ref_model, c, t, u, pad_len=rng.randint(0, 6))
        assert len(ref_model.tokenize(env.s)) == len(ref_model.tokenize(u)) + env.pad_len
        assert relay_unpack(ref_model, env) == u


def test_matches_direct_codec_path(ref_model):
    rng = random.Random(22)
    for _ in range(50):
        c, t, u = _triple(rng)
        env = relay_pack(ref_model, c, t, u)
        key = relay_key(c, t, ref_model.fingerprint)
        direct = encode(ref_model, u, key)
        assert direct.text == env.s
        assert decode(ref_model, StegoText(env.s, -1, ref_model.fingerprint), key) == relay_unpack(ref_model, env)


def test_zero_pad_greedy_answer_gives_greedy_trace_continuation(ref_model):
    c, t = "How do I bake bread?", "Let me think about the steps."
    u_tokens = ref_model.greedy(ref_model.tokenize(c), 30)
    u = ref_model.detokenize(u_tokens)
    env = relay_pack(ref_model, c, t, u, pad_len=0)
    assert list(ref_model.tokenize(env.s)) == ref_model.greedy(ref_model.tokenize(t), 30)


def test_flipped_byte_changes_output(ref_model):
    c, t, u = "Tell me a story.", "The user wants a story.", "The river flooded the lower part of the town."
    env = relay_pack(ref_model, c, t, u)
    s = bytearray(env.s.encode())
    s[3] = ord("Z") if s[3] != ord("Z") else ord("Q")
    tampered = RelayEnvelope(env.c, env.t, s.decode(), env.model_fingerprint, env.pad_len)
    assert relay_unpack(ref_model, tampered) != u


def test_envelope_file_is_byte_stable(ref_model, tmp_path):
    env = relay_pack(ref_model, "A request", "A trace </think><answer>", "a hidden reply")
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    env.save(p1)
    RelayEnvelope.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    text = p1.read_text()
    order = [text.index(f'"{k}"') for k in ("c", "t", "s", "model_fingerprint", "pad_len", "format_version")]
    assert order == sorted(order)
    assert RelayEnvelope.load(p1).t.endswith("</think><answer>")


def test_unpack_checks_fingerprint(ref_model, uniform_model):
    env = relay_pack(ref_model, "c", "t", "u")
    with pytest.raises(FingerprintMismatch):
        relay_unpack(uniform_model, env)


def test_envelope_requires_fingerprint():
    with pytest.raises(ValueError):
        RelayEnvelope("c", "t", "s", "")
