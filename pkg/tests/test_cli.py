import hashlib
import json
import os
import subprocess
import sys

import pytest

from rankstego.cli import main
from rankstego.model import BigramModel, bundled_corpus


def run(*args, env=None):
    """Run the CLI in a subprocess; returns (exit code, stdout, stderr)."""
    full_env = {**os.environ, **(env or {})}
    full_env.pop("RANKSTEGO_MODEL", None)
    proc = subprocess.run([sys.executable, "-m", "rankstego.cli", *map(str, args)],
                          capture_output=True, text=True, env=full_env)
    return proc.returncode, proc.stdout, proc.stderr


@pytest.fixture
def key_file(tmp_path):
    kf = tmp_path / "k.txt"
    kf.write_text("A short story about the sea, told by an old sailor to a child\n")
    key = tmp_path / "key.json"
    assert main(["keygen", "--k-file", str(kf), "-o", str(key)]) == 0
    return key


def test_shell_roundtrip(tmp_path, key_file):
    msg = tmp_path / "msg.txt"
    msg.write_bytes("The museum keeps a small collection of maps.\nSecond line.".encode())
    code, _, _ = run("encode", msg, "--key", key_file, "-o", tmp_path / "s.txt")
    assert code == 0
    assert (tmp_path / "s.txt").read_bytes() != msg.read_bytes()
    code, _, _ = run("decode", tmp_path / "s.txt", "--key", key_file, "-o", tmp_path / "back.txt")
    assert code == 0
    assert (tmp_path / "back.txt").read_bytes() == msg.read_bytes()


def test_keygen_reads_prompt_from_env(tmp_path):
    out = tmp_path / "key.json"
    code, _, err = run("keygen", "-o", out)
    assert code != 0 and "RANKSTEGO_K" in err
    code, _, _ = run("keygen", "-o", out, "--pad-len", "3", env={"RANKSTEGO_K": "from env"})
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["k"] == "from env" and doc["pad_len"] == 3


def test_key_file_roundtrips_byte_identically(tmp_path, key_file):
    from rankstego.codec import StegoKey

    key = StegoKey.load(key_file)
    key.save(tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == key_file.read_bytes()
    assert key.model_fingerprint == BigramModel.from_corpus(bundled_corpus()).fingerprint


def test_nonce_distinct_and_seedable(tmp_path):
    kf = tmp_path / "k.txt"
    kf.write_text("Review of the new cafe")
    ks = []
    for i, seed in enumerate([None, None, 7, 7]):
        out = tmp_path / f"k{i}.json"
        args = ["keygen", "--k-file", str(kf), "--nonce", "-o", str(out)]
        if seed is not None:
            args += ["--seed", str(seed)]
        assert main(args) == 0
        ks.append(json.loads(out.read_text())["k"])
    assert ks[0] != ks[1]
    assert ks[2] == ks[3]
    assert ks[2].startswith("Review of the new cafe [") and ks[2].endswith("]")
    assert len(ks[2].split("[")[1].rstrip("]")) == 10


def test_wrong_key_decode_exits_zero(tmp_path, key_file):
    msg = tmp_path / "msg.txt"
    msg.write_text("The storm passed during the night.")
    assert main(["encode", str(msg), "--key", str(key_file), "-o", str(tmp_path / "s.txt")]) == 0
    other = tmp_path / "k2.txt"
    other.write_text("A recipe for bread, written by a baker")
    assert main(["keygen", "--k-file", str(other), "-o", str(tmp_path / "key2.json")]) == 0
    assert main(["decode", str(tmp_path / "s.txt"), "--key", str(tmp_path / "key2.json"),
                 "-o", str(tmp_path / "wrong.txt")]) == 0
    wrong = (tmp_path / "wrong.txt").read_text()
    assert wrong != msg.read_text()
    assert len(wrong.encode()) == len(msg.read_text().encode())


def test_hash_input_warns_but_encodes(tmp_path, key_file):
    msg = tmp_path / "hash.txt"
    msg.write_text(hashlib.sha256(b"x").hexdigest())
    code, _, err = run("encode", msg, "--key", key_file, "-o", tmp_path / "s.txt")
    assert code == 0
    assert "mean rank" in err
    plain = tmp_path / "plain.txt"
    plain.write_text("The morning train was late again.")
    code, _, err = run("encode", plain, "--key", key_file, "-o", tmp_path / "s3.txt")
    assert code == 0 and "mean rank" not in err


def test_score_empty_file_header_only(tmp_path, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert main(["analyze", "score", str(empty)]) == 0
    assert capsys.readouterr().out == "id\ttoken_count\tlog_prob\n"


def test_distinguish_agrees_with_score(tmp_path, capsys):
    cands = tmp_path / "c.txt"
    cands.write_text("The river flooded the town.\nqZ#8 v!!kP0 ;;xw@@ 3Lm+]oo.\nThe storm passed at nights.\n")
    assert main(["analyze", "distinguish", str(cands)]) == 0
    dist = capsys.readouterr().out.splitlines()
    assert main(["analyze", "score", str(cands)]) == 0
    scores = capsys.readouterr().out.splitlines()
    assert dist[:4] == scores
    vals = [float(line.split("\t")[2]) for line in scores[1:]]
    assert dist[-1] == f"# winner\t{vals.index(max(vals))}"


def test_distinguish_length_mismatch_exit_6(tmp_path):
    cands = tmp_path / "c.txt"
    cands.write_text("short\nmuch longer line\n")
    assert main(["analyze", "distinguish", str(cands)]) == 6


def test_report_accounting(tmp_path):
    lines = [line for line in bundled_corpus().splitlines() if line]
    real = tmp_path / "real.txt"
    real.write_text("\n".join(lines) + "\n")
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("".join(f"Note {i}: a {'abcdefghij'[i]}\n" for i in range(10)))
    out = tmp_path / "r.tsv"
    assert main(["analyze", "report", str(real), "--prompts", str(prompts), "--originals",
                 ",".join(map(str, range(10))), "--length", "40", "--baselines", "3", "-o", str(out)]) == 0
    rows = [r.split("\t") for r in out.read_text().splitlines()[1:] if r and not r.startswith("#")]
    assert sum(r[1] == "stego" for r in rows) == 100
    assert sum(r[1] == "baseline-ascii" for r in rows) == 3
    assert sum(r[1] == "baseline-words" for r in rows) == 3


def test_report_jobs_match_single_process(tmp_path):
    lines = [line for line in bundled_corpus().splitlines() if line][:30]
    real = tmp_path / "real.txt"
    real.write_text("\n".join(lines) + "\n")
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("One: x\nTwo: y\nThree: z\n")
    outs = []
    for jobs in ("1", "2"):
        out = tmp_path / f"r{jobs}.tsv"
        assert main(["analyze", "report", str(real), "--prompts", str(prompts), "--length", "40",
                     "--baselines", "5", "--jobs", jobs, "-o", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_bridge_plan_and_remap(capsys):
    assert main(["bridge", "plan", "100000", "60000"]) == 0
    assert "L=59798 B=201" in capsys.readouterr().out
    assert main(["bridge", "remap", "98799"]) == 0
    assert capsys.readouterr().out.strip() == "59992 59804"
    assert main(["bridge", "unremap", "59992", "59804"]) == 0
    assert capsys.readouterr().out.strip() == "98799"


def test_bridge_out_of_range_exit_5():
    assert main(["bridge", "remap", "100001"]) == 5


def test_recode_roundtrip_files(tmp_path):
    lines = [line for line in bundled_corpus().splitlines() if line]
    (tmp_path / "a.txt").write_text("\n".join(lines[:40]) + "\n")
    (tmp_path / "b.txt").write_text("\n".join(lines[40:]) + "\n")
    assert main(["bridge", "table", "--input", str(tmp_path / "a.txt"), "-o", str(tmp_path / "a.rsrt")]) == 0
    assert main(["bridge", "table", "--input", str(tmp_path / "b.txt"), "--corpus", str(tmp_path / "a.txt"),
                 "-o", str(tmp_path / "b.rsrt")]) == 0
    ranks = tmp_path / "ranks.txt"
    ranks.write_text("".join(f"{r}\n" for r in [1, 1, 2, 5, 1, 3, 40, 1, 256, 7]))
    tables = ["--src-table", str(tmp_path / "a.rsrt"), "--dst-table", str(tmp_path / "b.rsrt")]
    assert main(["bridge", "recode", "--input", str(ranks), *tables, "-o", str(tmp_path / "out.txt")]) == 0
    assert main(["bridge", "recode", "--inverse", "--input", str(tmp_path / "out.txt"), *tables,
                 "-o", str(tmp_path / "back.txt")]) == 0
    assert (tmp_path / "back.txt").read_bytes() == ranks.read_bytes()


def test_relay_roundtrip(tmp_path):
    for name, text in (("c", "How do I fix a bike?"), ("t", "The user asks about bikes."),
                       ("u", "Turn it upside down and check the chain.")):
        (tmp_path / name).write_text(text)
    env = tmp_path / "env.json"
    assert main(["relay", "pack", "--request", str(tmp_path / "c"), "--trace", str(tmp_path / "t"),
                 "--answer", str(tmp_path / "u"), "-o", str(env)]) == 0
    assert main(["relay", "unpack", str(env), "-o", str(tmp_path / "back")]) == 0
    assert (tmp_path / "back").read_text() == (tmp_path / "u").read_text()


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert {line.split("\t")[1] for line in out.splitlines()} >= {"load", "determinism", "tokenizer", "reference-roundtrip"}


def test_selftest_detects_corrupted_weights(tmp_path, key_file, capsys):
    path = tmp_path / "m.rsbg"
    assert main(["model", "build", "-o", str(path)]) == 0
    blob = bytearray(path.read_bytes())
    blob[-8] ^= 1  # bump one count
    path.write_bytes(bytes(blob))
    capsys.readouterr()
    assert main(["selftest", "--model", str(path), "--key", str(key_file)]) == 3
    out = capsys.readouterr().out
    assert any(line.startswith("FAIL\tfingerprint") for line in out.splitlines())


def test_fingerprint_mismatch_exit_3(tmp_path, key_file):
    other = tmp_path / "other.txt"
    other.write_text("a different corpus entirely")
    msg = tmp_path / "m.txt"
    msg.write_text("hello")
    assert main(["encode", str(msg), "--key", str(key_file), "--corpus", str(other)]) == 3


def test_context_overflow_exit_4(tmp_path, key_file):
    msg = tmp_path / "m.txt"
    msg.write_text("x" * 50)
    assert main(["encode", str(msg), "--key", str(key_file), "--context-window", "20"]) == 4


def test_retokenization_exit_2(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("café naïve façade Größe 漢字 " * 3 + "plain ascii text")
    kf = tmp_path / "k.txt"
    kf.write_text("une caf")
    key = tmp_path / "key.json"
    assert main(["keygen", "--corpus", str(corpus), "--k-file", str(kf), "--pad-len", "0", "-o", str(key)]) == 0
    codes = set()
    for i in range(40):
        msg = tmp_path / "m.txt"
        msg.write_text("".join("éøß漢字 ab"[(i * 7 + j * j) % 8] for j in range(8)))
        codes.add(main(["encode", str(msg), "--key", str(key), "--corpus", str(corpus), "-o", str(tmp_path / "s")]))
    assert 2 in codes


def test_invalid_utf8_input_rejected(tmp_path, key_file):
    msg = tmp_path / "m.txt"
    msg.write_bytes(b"abc\xff")
    assert main(["encode", str(msg), "--key", str(key_file)]) == 1


def test_secret_not_in_argv_or_logs(tmp_path, key_file):
    msg = tmp_path / "m.txt"
    msg.write_text("hello there")
    code, out, err = run("-vv", "encode", msg, "--key", key_file, "-o", tmp_path / "s")
    assert code == 0
    assert "old sailor" not in out + err
