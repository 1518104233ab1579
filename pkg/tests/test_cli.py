"""End-to-end command-line behaviour and exit codes."""

import hashlib
import json
import os

import pytest

from dialectfuse.cli import main
from dialectfuse.data.report import read_report

SMALL_GEN = {"n_train": 64, "n_val": 32, "vocab_size": 60, "latent_shape": [4, 8, 8], "d_text": 8}
SMALL_RUN = {
    "model": {"d": 8, "heads": 2, "layers": 1, "d_f": 8, "max_len": 8, "channels": [4, 4, 4]},
    "plan": {"warmup_steps": 3, "warmup_batch": 16, "epochs": 2, "batch_size": 16},
}


def tree_hash(root):
    h = hashlib.sha256()
    for dirpath, dirnames, names in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(names):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def configs(tmp_path_factory):
    root = tmp_path_factory.mktemp("configs")
    gen, run = root / "gen.json", root / "run.json"
    gen.write_text(json.dumps(SMALL_GEN))
    run.write_text(json.dumps(SMALL_RUN))
    return str(gen), str(run)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory, configs):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    assert main(["gen-synth", "--out", str(out), "--config", configs[0]]) == 0
    return str(out)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus, configs):
    out = str(tmp_path_factory.mktemp("cli") / "run")
    assert main(["train", "--data", corpus, "--out", out, "--config", configs[1]]) == 0
    return out


class TestGenSynth:
    def test_summary_printed(self, tmp_path, configs, capsys):
        assert main(["gen-synth", "--out", str(tmp_path / "c"), "--config", configs[0], "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert "wrote 96 samples" in out
        assert "train=64" in out and "val=32" in out
        assert "signal strengths: audio=0.9 visual=0.5 text=0.4" in out

    def test_defaults(self, tmp_path, capsys):
        assert main(["gen-synth", "--out", str(tmp_path / "c"), "--n-train", "20", "--n-val", "10"]) == 0
        assert "classes: 5 (single-label)" in capsys.readouterr().out

    def test_regeneration_is_identical(self, tmp_path, configs):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["gen-synth", "--out", str(out), "--config", configs[0]]) == 0
        assert tree_hash(a) == tree_hash(b)

    def test_negative_signal_is_usage_error(self, tmp_path, capsys):
        assert main(["gen-synth", "--out", str(tmp_path / "c"), "--audio-signal", "-0.1"]) == 2
        assert "usage error" in capsys.readouterr().err

    def test_unknown_config_field(self, tmp_path, capsys):
        cfg = tmp_path / "g.json"
        cfg.write_text(json.dumps({"colour": 1}))
        assert main(["gen-synth", "--out", str(tmp_path / "c"), "--config", str(cfg)]) == 2
        assert "colour" in capsys.readouterr().err

    def test_bad_dialect(self, tmp_path):
        assert main(["gen-synth", "--out", str(tmp_path / "c"), "--dialects", "klingon"]) == 2


class TestTrainEval:
    def test_run_directory(self, trained):
        for name in ("report.txt", "report.json", "loss.log", "warmup_loss.log", "history.jsonl"):
            assert os.path.isfile(os.path.join(trained, name)), name
        assert os.path.isfile(os.path.join(trained, "checkpoint", "meta.json"))
        with open(os.path.join(trained, "history.jsonl")) as fh:
            assert len(fh.readlines()) == 2
        with open(os.path.join(trained, "warmup_loss.log")) as fh:
            assert len(fh.readlines()) == 3

    def test_eval_writes_report(self, trained, corpus, tmp_path, capsys):
        out = tmp_path / "rep"
        assert main(["eval", "--data", corpus, "--checkpoint", os.path.join(trained, "checkpoint"), "--out", str(out), "--grouped"]) == 0
        text = capsys.readouterr().out
        assert text.startswith("val: accuracy")
        assert "north" in text and "south" in text
        rep = read_report(str(out) + ".json")
        train_rep = read_report(os.path.join(trained, "report.json"))
        assert rep.accuracy == train_rep.accuracy
        with open(str(out) + ".txt") as fh:
            assert "accuracy" in fh.read()

    def test_missing_checkpoint(self, corpus, tmp_path, capsys):
        code = main(["eval", "--data", corpus, "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path / "r")])
        assert code == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_ablation_recorded(self, corpus, configs, tmp_path):
        out = tmp_path / "run"
        args = ["train", "--data", corpus, "--out", str(out), "--config", configs[1], "--ablate", "audio", "--epochs", "1"]
        assert main(args) == 0
        rep = read_report(str(out / "report.json"))
        assert rep.meta["ablation"] == "no-audio"
        with open(out / "checkpoint" / "meta.json") as fh:
            assert json.load(fh)["ablation"]["use_audio"] is False

    def test_train_is_deterministic(self, trained, corpus, configs, tmp_path):
        out = tmp_path / "again"
        assert main(["train", "--data", corpus, "--out", str(out), "--config", configs[1]]) == 0
        for name in ("loss.log", "warmup_loss.log", "history.jsonl"):
            with open(os.path.join(trained, name), "rb") as a, open(out / name, "rb") as b:
                assert a.read() == b.read(), name
        assert tree_hash(os.path.join(trained, "checkpoint")) == tree_hash(out / "checkpoint")

    def test_warmup_then_train(self, corpus, configs, tmp_path, capsys):
        warm = tmp_path / "warm"
        assert main(["warmup", "--data", corpus, "--out", str(warm), "--config", configs[1], "--steps", "2"]) == 0
        assert "warm-up: 2 steps" in capsys.readouterr().out
        out = tmp_path / "run"
        assert main(["train", "--data", corpus, "--out", str(out), "--config", configs[1], "--warm", str(warm), "--epochs", "1"]) == 0

    def test_zero_step_warmup(self, corpus, configs, tmp_path, capsys):
        assert main(["warmup", "--data", corpus, "--out", str(tmp_path / "w"), "--config", configs[1], "--steps", "0"]) == 0
        assert "equals initialisation" in capsys.readouterr().out

    def test_inconsistent_config(self, corpus, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"model": {"d": 10, "heads": 4}}))
        assert main(["train", "--data", corpus, "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 2

    def test_missing_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 1


class TestGradcheck:
    def test_all_groups_pass(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        for group in ("audio-encoder", "cross-attention-qkv", "fusion-projection", "visual-cnn", "text-adapter", "classifier", "contrastive-scale-bias"):
            assert group in out
        assert "all 7 groups within 1e-06" in out

    def test_fault_is_reported(self, capsys):
        assert main(["gradcheck", "--inject-fault", "conv2d:2"]) == 1
        cap = capsys.readouterr()
        assert "gradient check failed for: visual-cnn" in cap.err
        assert "FAIL" in cap.out


class TestInspect:
    def test_tensor_file(self, corpus, capsys):
        assert main(["inspect", os.path.join(corpus, "latents", "s00000.pft")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("PFT1 float64 dims=")
        assert "min=" in out and "mean=" in out and "max=" in out

    def test_truncated_tensor(self, corpus, tmp_path, capsys):
        with open(os.path.join(corpus, "latents", "s00000.pft"), "rb") as fh:
            blob = fh.read()
        bad = tmp_path / "cut.pft"
        bad.write_bytes(blob[: len(blob) - 5])
        assert main(["inspect", str(bad)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_checkpoint_dir(self, trained, capsys):
        assert main(["inspect", os.path.join(trained, "checkpoint")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("checkpoint: stage=")
        assert "classifier.fc.w" in out
        assert "tensors," in out and "parameters" in out

    def test_corpus_dir(self, corpus, capsys):
        assert main(["inspect", corpus]) == 0
        out = capsys.readouterr().out
        assert "manifest: 96 samples" in out

    def test_report(self, trained, capsys):
        assert main(["inspect", os.path.join(trained, "report.json")]) == 0
        assert capsys.readouterr().out.startswith("report: accuracy=")


class TestTableAndUsage:
    def test_table(self, trained, capsys):
        assert main(["table", os.path.join(trained, "report.json"), "--label", "ablation"]) == 0
        out = capsys.readouterr().out
        header, row = out.splitlines()
        assert header.split() == ["run", "acc", "mic-f1", "mac-f1", "n"]
        assert row.split()[0] == "full" and row.split()[-1] == "32"

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 2

    def test_unknown_flag(self, tmp_path):
        assert main(["gen-synth", "--out", str(tmp_path), "--bogus"]) == 2

    def test_unknown_ablation(self, tmp_path):
        assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path), "--ablate", "smell"]) == 2

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "gen-synth" in capsys.readouterr().out
