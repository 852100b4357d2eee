import json
import re
import subprocess
import sys
from collections import Counter

import pytest

from sdlm import toydata
from sdlm.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    toydata.write_jsonl(root / "train.jsonl", toydata.generate(40, seed=0))
    toydata.write_jsonl(root / "valid.jsonl", toydata.generate(12, seed=1))
    return root


TINY_TRAIN = [
    "--steps", "15", "--batch-size", "8", "--warmup", "5",
    "--hidden", "16", "--layers", "1", "--heads", "2", "--ffn-mult", "2",
    "--T", "12", "--max-len", "16", "--dropout", "0.0",
    "--checkpoint-every", "100",
]


@pytest.fixture(scope="module")
def trained_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    rc = main([
        "train", "--corpus", str(data_dir / "train.jsonl"),
        "--out", str(out), "--seed", "1", *TINY_TRAIN,
    ])
    assert rc == 0
    return out


class TestPrepare:
    def test_writes_artifacts_and_is_deterministic(self, data_dir, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            rc = main([
                "prepare", "--corpus", str(data_dir / "train.jsonl"),
                "--out", str(out),
            ])
            assert rc == 0
        for name in ("vocab.json", "stats.json", "importance.csv",
                     "resolved_config.json"):
            assert (out_a / name).exists()
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
        assert (out_a / "importance_hist.png").exists()

    def test_stats_match_shell_style_counter(self, data_dir, tmp_path):
        out = tmp_path / "out"
        assert main([
            "prepare", "--corpus", str(data_dir / "train.jsonl"),
            "--out", str(out),
        ]) == 0
        stats = json.loads((out / "stats.json").read_text())
        token_re = re.compile(r"\w+(?:'\w+)?|[^\w\s]")
        counts = Counter()
        docs = Counter()
        with open(data_dir / "train.jsonl") as fh:
            for line in fh:
                toks = token_re.findall(json.loads(line)["text"].lower())
                counts.update(toks)
                docs.update(set(toks))
        assert stats["n_sentences"] == 40
        assert stats["total_tokens"] == sum(counts.values())
        for tok, n in counts.items():
            assert stats["token_frequency"][tok] == n
        for tok, n in docs.items():
            assert stats["document_frequency"][tok] == n

    def test_malformed_corpus_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"text": "ok"}\n{broken\n', encoding="utf-8")
        rc = main(["prepare", "--corpus", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ")
        assert ":2:" in err


class TestTrain:
    def test_artifacts_exist(self, trained_dir):
        for name in ("checkpoint.pt", "metrics.jsonl", "metrics.csv",
                     "loss_curve.png", "resolved_config.json"):
            assert (trained_dir / name).exists()
        rows = [json.loads(l) for l in (trained_dir / "metrics.jsonl").read_text().splitlines()]
        assert len(rows) == 15
        assert {"step", "loss", "lr"} <= set(rows[0])

    def test_seeded_reruns_identical(self, data_dir, tmp_path):
        outs = [tmp_path / "r1", tmp_path / "r2"]
        for out in outs:
            rc = main([
                "train", "--corpus", str(data_dir / "train.jsonl"),
                "--out", str(out), "--seed", "9", "--steps", "8",
                "--batch-size", "4", "--warmup", "2", "--hidden", "16",
                "--layers", "1", "--heads", "2", "--ffn-mult", "2",
                "--T", "12", "--max-len", "16", "--dropout", "0.0",
            ])
            assert rc == 0
        assert (outs[0] / "metrics.jsonl").read_bytes() == (outs[1] / "metrics.jsonl").read_bytes()

    def test_config_file_and_flag_precedence(self, data_dir, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            "[train]\nsteps = 4\nlr = 0.001\n\n[model]\nhidden = 16\n"
            "layers = 1\nheads = 2\nffn_mult = 2\ndropout = 0.0\n\n"
            "[schedule]\nT = 12\n\n[data]\nmax_len = 16\n",
            encoding="utf-8",
        )
        out = tmp_path / "out"
        rc = main([
            "train", "--corpus", str(data_dir / "train.jsonl"),
            "--config", str(cfg), "--out", str(out), "--steps", "6",
        ])
        assert rc == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["train"]["steps"] == 6      # flag beats file
        assert resolved["train"]["lr"] == 0.001     # file beats default
        assert resolved["model"]["hidden"] == 16
        rows = (out / "metrics.jsonl").read_text().splitlines()
        assert len(rows) == 6

    def test_unknown_strategy_exits_nonzero(self, data_dir, tmp_path, capsys):
        rc = main([
            "train", "--corpus", str(data_dir / "train.jsonl"),
            "--out", str(tmp_path / "o"), "--strategy", "bogus", *TINY_TRAIN,
        ])
        assert rc == 1
        assert "error: unknown strategy" in capsys.readouterr().err


class TestSample:
    def test_length_control_line_count_and_width(self, trained_dir, tmp_path):
        out = tmp_path / "s"
        rc = main([
            "sample", "--checkpoint", str(trained_dir / "checkpoint.pt"),
            "--out", str(out), "--control", "length=7", "--samples", "5",
            "--seed", "3",
        ])
        assert rc == 0
        lines = (out / "samples.txt").read_text().strip().splitlines()
        assert len(lines) == 5
        assert all(len(line.split()) == 7 for line in lines)
        meta = json.loads((out / "samples.json").read_text())
        assert all(o["length"] == 7 for o in meta["outputs"])

    def test_unconditional_uses_length_histogram(self, trained_dir, tmp_path):
        out = tmp_path / "u"
        rc = main([
            "sample", "--checkpoint", str(trained_dir / "checkpoint.pt"),
            "--out", str(out), "--samples", "3", "--seed", "0",
        ])
        assert rc == 0
        lines = (out / "samples.txt").read_text().strip().splitlines()
        assert len(lines) == 3

    def test_mbr_meta_and_determinism(self, trained_dir, tmp_path):
        outs = [tmp_path / "m1", tmp_path / "m2"]
        for out in outs:
            rc = main([
                "sample", "--checkpoint", str(trained_dir / "checkpoint.pt"),
                "--out", str(out), "--control", "length=6", "--samples", "2",
                "--mbr", "--candidates", "3", "--seed", "11",
            ])
            assert rc == 0
        assert (outs[0] / "samples.txt").read_bytes() == (outs[1] / "samples.txt").read_bytes()
        meta = json.loads((outs[0] / "samples.json").read_text())
        assert meta["mbr"] is True and meta["candidates"] == 3

    def test_malformed_control_exits_nonzero(self, trained_dir, tmp_path, capsys):
        rc = main([
            "sample", "--checkpoint", str(trained_dir / "checkpoint.pt"),
            "--out", str(tmp_path / "x"), "--control", "bogus",
        ])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_content_control_without_classifier_or_corpus_fails(
        self, trained_dir, tmp_path, capsys
    ):
        rc = main([
            "sample", "--checkpoint", str(trained_dir / "checkpoint.pt"),
            "--out", str(tmp_path / "x"), "--control", "content=food:japanese",
        ])
        assert rc == 1
        assert "classifier" in capsys.readouterr().err


class TestEval:
    def test_length_task_structural_accuracy_is_one(self, trained_dir, data_dir, tmp_path):
        out = tmp_path / "e"
        rc = main([
            "eval", "--checkpoint", str(trained_dir / "checkpoint.pt"),
            "--task", "length", "--targets", str(data_dir / "valid.jsonl"),
            "--out", str(out), "--max-targets", "4", "--no-mbr",
            "--teacher-steps", "10", "--seed", "2",
        ])
        assert rc == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["task"] == "length"
        assert rep["accuracy"] == 1.0
        assert rep["sample_count"] == 4
        assert rep["fluency"] > 1.0
        for name in ("report.csv", "report.png", "outputs.txt"):
            assert (out / name).exists()

    def test_explicit_length_targets_file(self, trained_dir, tmp_path):
        targets = tmp_path / "targets.jsonl"
        targets.write_text(
            '{"length": 5, "text": "the mill serves thai food ."}\n'
            '{"length": 9, "text": "the mill serves thai food ."}\n',
            encoding="utf-8",
        )
        out = tmp_path / "e2"
        rc = main([
            "eval", "--checkpoint", str(trained_dir / "checkpoint.pt"),
            "--task", "length", "--targets", str(targets), "--out", str(out),
            "--no-mbr", "--teacher-steps", "5", "--seed", "0",
        ])
        assert rc == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["accuracy"] == 1.0

    def test_content_task_with_on_demand_classifier(self, trained_dir, data_dir, tmp_path):
        out = tmp_path / "c"
        rc = main([
            "eval", "--checkpoint", str(trained_dir / "checkpoint.pt"),
            "--task", "content", "--targets", str(data_dir / "valid.jsonl"),
            "--corpus", str(data_dir / "train.jsonl"),
            "--out", str(out), "--max-targets", "2", "--candidates", "2",
            "--classifier-steps", "10", "--teacher-steps", "5", "--updates", "1",
            "--seed", "0",
        ])
        assert rc == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["task"] == "content"
        assert 0.0 <= rep["accuracy"] <= 1.0


class TestAblateCli:
    def test_single_cell_sweep(self, data_dir, tmp_path):
        out = tmp_path / "ab"
        rc = main([
            "ablate", "--corpus", str(data_dir / "train.jsonl"),
            "--valid", str(data_dir / "valid.jsonl"), "--out", str(out),
            "--strategies", "mask-entropy-rel", "--objectives", "ce",
            "--train-steps", "12", "--classifier-steps", "10",
            "--teacher-steps", "10", "--targets", "2", "--samples-per-target", "2",
            "--hidden", "16", "--layers", "1", "--T", "12", "--batch-size", "8",
            "--seed", "0",
        ])
        assert rc == 0
        payload = json.loads((out / "ablation.json").read_text())
        assert len(payload["cells"]) == 1
        assert payload["cells"][0]["report"] is not None
        for name in ("ablation.csv", "ablation.txt", "ablation.png"):
            assert (out / name).exists()


class TestOutputRoot:
    def test_relative_out_resolves_under_env_root(self, data_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("SDLM_OUTPUT_ROOT", str(tmp_path))
        rc = main([
            "prepare", "--corpus", str(data_dir / "train.jsonl"),
            "--out", "nested/run",
        ])
        assert rc == 0
        assert (tmp_path / "nested" / "run" / "vocab.json").exists()


def test_console_entry_point_help():
    proc = subprocess.run(
        [sys.executable, "-m", "sdlm.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    for command in ("prepare", "train", "sample", "eval", "ablate"):
        assert command in proc.stdout
