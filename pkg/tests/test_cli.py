from __future__ import annotations

import csv
import hashlib
import io
import json
import sys

import pytest

from chatscreen.cli import main
from chatscreen.encoder import save_params


@pytest.fixture
def workspace(tmp_path, mini_corpus, mini_model):
    """Config + vocab files + mini weights on disk, ready for CLI calls."""
    safe, profane = mini_corpus
    (tmp_path / "safe.txt").write_text("\n".join(safe) + "\n", encoding="utf-8")
    (tmp_path / "profane.txt").write_text("\n".join(profane) + "\n", encoding="utf-8")
    save_params(mini_model, tmp_path / "weights.bin")
    (tmp_path / "pipeline.cfg").write_text(
        "threshold = 0.8\n"
        "profane_vocab = profane.txt\n"
        "safe_english = safe.txt\n"
        "weights = weights.bin\n"
        "index = index.bin\n",
        encoding="utf-8",
    )
    return tmp_path


def run_cli(args, stdin_text=""):
    old_stdin, old_stdout = sys.stdin, sys.stdout
    sys.stdin = io.StringIO(stdin_text)
    sys.stdout = io.StringIO()
    try:
        code = main(args)
        return code, sys.stdout.getvalue()
    finally:
        sys.stdin, sys.stdout = old_stdin, old_stdout


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["definitely-not-a-command"])
    assert exc.value.code == 2


def test_missing_config_is_a_usage_error():
    code, _ = run_cli(["detect"], stdin_text="hello\n")
    assert code == 2


def test_detect_with_empty_profane_vocab(tmp_path):
    (tmp_path / "profane.txt").write_text("", encoding="utf-8")
    cfg = tmp_path / "p.cfg"
    cfg.write_text("profane_vocab = profane.txt\n", encoding="utf-8")
    code, out = run_cli(["--config", str(cfg), "detect"], stdin_text="hello\n")
    assert code == 0
    record = json.loads(out.strip())
    assert record["label"] == "not_profane"


def test_detect_direct_and_merge(workspace, mini_corpus):
    _, profane = mini_corpus
    key = profane[0]
    stdin = f"{key}\n{' '.join(key)}\nperfectly fine words\n"
    code, out = run_cli(["--config", str(workspace / "pipeline.cfg"), "detect"], stdin)
    assert code == 0
    records = [json.loads(line) for line in out.strip().splitlines()]
    assert records[0]["label"] == "profane_direct"
    assert records[1]["label"] == "profane_direct"
    assert records[1]["token"] == key


def test_index_build_and_reuse(workspace):
    code, out = run_cli(
        ["--config", str(workspace / "pipeline.cfg"), "index-build", "--out", str(workspace / "index.bin")]
    )
    assert code == 0
    assert (workspace / "index.bin").exists()
    assert "indexed" in out


def test_vocab_add_is_live_and_weights_untouched(workspace):
    weights_path = workspace / "weights.bin"
    digest_before = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    cfg = str(workspace / "pipeline.cfg")

    code, _ = run_cli(["--config", cfg, "detect"], stdin_text="freshbad\n")
    assert code == 0

    code, out = run_cli(["--config", cfg, "vocab-add", "FreshBad"])
    assert code == 0
    assert "freshbad" in out

    code, out = run_cli(["--config", cfg, "detect"], stdin_text="freshbad\n")
    assert code == 0
    assert json.loads(out.strip())["label"] == "profane_direct"
    assert hashlib.sha256(weights_path.read_bytes()).hexdigest() == digest_before
    assert "freshbad" in (workspace / "profane.txt").read_text(encoding="utf-8").split()


def test_export_embeddings(workspace):
    out_csv = workspace / "emb.csv"
    code, out = run_cli(
        [
            "export-embeddings",
            str(workspace / "profane.txt"),
            "--weights",
            str(workspace / "weights.bin"),
            "--out",
            str(out_csv),
        ]
    )
    assert code == 0
    with open(out_csv, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows[0]) == 65


def test_fixtures_command(tmp_path):
    out_dir = tmp_path / "fx"
    code, out = run_cli(
        [
            "fixtures",
            "--out",
            str(out_dir),
            "--n-safe",
            "20",
            "--n-profane",
            "5",
            "--chats",
            "30",
            "--seed",
            "2",
        ]
    )
    assert code == 0
    for name in ("safe_english.txt", "profane.txt", "train_tokens.txt", "labeled_chats.csv"):
        assert (out_dir / name).exists()
    assert len((out_dir / "profane.txt").read_text().split()) == 5


def test_train_and_eval_smoke(tmp_path):
    out_dir = tmp_path / "fx"
    run_cli(
        ["fixtures", "--out", str(out_dir), "--n-safe", "24", "--n-profane", "6",
         "--chats", "40", "--seed", "3", "--len-min", "4", "--len-max", "8"]
    )
    code, out = run_cli(
        [
            "train",
            str(out_dir / "train_tokens.txt"),
            "--out", str(out_dir / "w.bin"),
            "--history", str(out_dir / "h.csv"),
            "--epochs", "8",
            "--batch-size", "8",
            "--lr", "0.003",
            "--embed-dim", "8",
            "--hidden-dim", "16",
            "--seed", "1",
        ]
    )
    assert code == 0, out
    assert (out_dir / "w.bin").exists()
    with open(out_dir / "h.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8

    cfg = out_dir / "p.cfg"
    cfg.write_text(
        "threshold = 0.8\nprofane_vocab = profane.txt\nsafe_english = safe_english.txt\n"
        "weights = w.bin\n",
        encoding="utf-8",
    )
    code, out = run_cli(
        ["--config", str(cfg), "eval", "--data", str(out_dir / "labeled_chats.csv"), "--baseline"]
    )
    assert code == 0
    assert "regex" in out

    code, out = run_cli(
        ["--config", str(cfg), "eval", "--data", str(out_dir / "labeled_chats.csv"),
         "--sweep", "0.5,0.9", "--report-csv", str(out_dir / "report.csv")]
    )
    assert code == 0
    with open(out_dir / "report.csv", newline="") as fh:
        report_rows = list(csv.DictReader(fh))
    assert len(report_rows) == 4  # 2 thresholds x 2 classes


def test_train_config_file_with_flag_overrides(tmp_path):
    out_dir = tmp_path / "fx"
    run_cli(
        ["fixtures", "--out", str(out_dir), "--n-safe", "24", "--n-profane", "6",
         "--chats", "10", "--seed", "4", "--len-min", "4", "--len-max", "8"]
    )
    train_cfg = out_dir / "train.cfg"
    train_cfg.write_text(
        "# training settings\n"
        "epochs = 3\n"
        "batch_size = 8\n"
        "lr0 = 0.002\n"
        "embed_dim = 8\n"
        "hidden_dim = 16\n"
        "seed = 11\n"
        "p_delete = 0.4\n",
        encoding="utf-8",
    )
    code, out = run_cli(
        ["train", str(out_dir / "train_tokens.txt"),
         "--train-config", str(train_cfg),
         "--out", str(out_dir / "w.bin"),
         "--history", str(out_dir / "h.csv"),
         "--epochs", "4"]  # flag beats the file
    )
    assert code == 0, out
    with open(out_dir / "h.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4


def test_runtime_error_exits_1(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("profane_vocab = missing.txt\n", encoding="utf-8")
    code, _ = run_cli(["--config", str(cfg), "detect"], stdin_text="hello\n")
    assert code == 1


def test_serve_subprocess_round_trip(workspace, mini_corpus):
    import json as jsonlib
    import socket
    import subprocess
    import time as timelib

    _, profane = mini_corpus
    spaced_key = " ".join(profane[0])
    proc = subprocess.Popen(
        [
            sys.executable,
            "-m",
            "chatscreen.cli",
            "--config",
            str(workspace / "pipeline.cfg"),
            "serve",
            "--listen",
            "127.0.0.1:0",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on "), line
        host, _, port = line.strip().rpartition(" ")[2].rpartition(":")
        deadline = timelib.time() + 5
        while True:
            try:
                sock = socket.create_connection((host, int(port)), timeout=2)
                break
            except OSError:
                if timelib.time() > deadline:
                    raise
        with sock:
            fh = sock.makefile("rw", encoding="utf-8")
            fh.write(jsonlib.dumps({"chat_id": "s1", "text": spaced_key, "meta": {}}) + "\n")
            fh.flush()
            reply = jsonlib.loads(fh.readline())
        assert reply["label"] == "profane_direct"
        assert reply["chat_id"] == "s1"
    finally:
        proc.terminate()
        proc.wait(timeout=10)
