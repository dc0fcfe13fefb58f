import json
import subprocess
import sys

import pytest

from aftcap import datagen as dg
from aftcap.cli import main


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    events = tuple(dg.EventType(n, dg._PHRASES[n], 3) for n in ("dog", "horn", "bell"))
    spec = dg.CorpusSpec(name="cli-toy", event_types=events, connectives=dg.CONNECTIVES,
                         n_clips=30, events_per_clip=(2, 3), frames=16, bands=16,
                         noise_std=0.05, seed=9, space="encoder")
    dg.write_corpus(dg.generate_corpus(spec), root / "toy")
    return root / "toy"


@pytest.fixture(scope="module")
def trained_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--corpus", str(corpus_dir), "--out", str(out),
               "--epochs", "4", "--features", "import", "--lr", "3e-3",
               "--window-size", "4", "--seed", "0"])
    assert rc == 0
    return out


def test_synth_data_writes_pair(tmp_path):
    rc = main(["synth-data", "--out", str(tmp_path / "d"), "--space", "encoder",
               "--corpus", "b", "--seed", "3"])
    assert rc == 0
    assert (tmp_path / "d" / "corpus-b" / "captions.jsonl").exists()
    assert (tmp_path / "d" / "config.json").exists()


def test_train_outputs(trained_dir):
    assert (trained_dir / "checkpoint.laft").exists()
    cfg = json.loads((trained_dir / "config.json").read_text())
    assert cfg["command"] == "train"
    assert cfg["seed"] == 0
    lines = (trained_dir / "metrics.jsonl").read_text().strip().splitlines()
    assert len(lines) == 4
    rec = json.loads(lines[0])
    assert set(rec) == {"epoch", "train_loss", "eval_loss"}


def test_caption_beam1_equals_greedy_path(corpus_dir, trained_dir, tmp_path):
    ckpt = str(trained_dir / "checkpoint.laft")
    out1 = tmp_path / "b1.jsonl"
    out2 = tmp_path / "b1b.jsonl"
    for out in (out1, out2):
        rc = main(["caption", "--checkpoint", ckpt, "--corpus", str(corpus_dir),
                   "--out", str(out), "--beam", "1", "--max-len", "16"])
        assert rc == 0
    assert out1.read_text() == out2.read_text()
    recs = [json.loads(l) for l in out1.read_text().splitlines()]
    assert all(set(r) == {"clip_id", "caption", "log_prob"} for r in recs)


def test_evaluate_identity_scores_one(corpus_dir, tmp_path):
    out = tmp_path / "metrics.json"
    rc = main(["evaluate", "--candidates", str(corpus_dir / "captions.jsonl"),
               "--references", str(corpus_dir / "captions.jsonl"), "--out", str(out)])
    assert rc == 0
    scores = json.loads(out.read_text())
    assert scores["bleu1"] == pytest.approx(1.0)
    assert scores["rouge_l"] == pytest.approx(1.0)


def test_evaluate_roundtrip_on_model_output(corpus_dir, trained_dir, tmp_path):
    ckpt = str(trained_dir / "checkpoint.laft")
    caps = tmp_path / "caps.jsonl"
    rc = main(["caption", "--checkpoint", ckpt, "--corpus", str(corpus_dir),
               "--out", str(caps), "--beam", "3", "--max-len", "16"])
    assert rc == 0
    rc = main(["evaluate", "--candidates", str(caps),
               "--references", str(corpus_dir / "captions.jsonl"),
               "--out", str(tmp_path / "m.json")])
    assert rc == 0
    scores = json.loads((tmp_path / "m.json").read_text())
    assert 0.0 <= scores["bleu1"] <= 1.0


def test_finetune_command(corpus_dir, trained_dir, tmp_path):
    rc = main(["finetune", "--checkpoint", str(trained_dir / "checkpoint.laft"),
               "--corpus", str(corpus_dir), "--out", str(tmp_path / "ft"),
               "--epochs", "1", "--features", "import"])
    assert rc == 0
    assert (tmp_path / "ft" / "checkpoint.laft").exists()


def test_config_file_merging_and_unknown_keys(corpus_dir, tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"epochs": 1, "lr": 1e-3}))
    rc = main(["train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "r"),
               "--config", str(cfg_path), "--features", "import"])
    assert rc == 0
    echoed = json.loads((tmp_path / "r" / "config.json").read_text())
    assert echoed["epochs"] == 1

    cfg_path.write_text(json.dumps({"bogus_key": 5}))
    rc = main(["train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "r2"),
               "--config", str(cfg_path)])
    assert rc == 1  # usage error


def test_usage_error_exit_code():
    assert main(["train"]) == 1          # missing required options
    assert main(["synth-data", "--out", "/tmp/x", "--space", "marzipan"]) == 1


def test_runtime_error_exit_code(tmp_path):
    rc = main(["caption", "--checkpoint", str(tmp_path / "nope.laft"),
               "--corpus", str(tmp_path), "--out", str(tmp_path / "o.jsonl")])
    assert rc == 2


def test_console_entry_point_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "aftcap", "synth-data",
                           "--out", str(tmp_path / "d"), "--corpus", "b",
                           "--space", "encoder"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "aftcap", "evaluate",
                           "--candidates", "/nonexistent.jsonl",
                           "--references", "/nonexistent.jsonl"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.strip()  # diagnostics on stderr


def test_gradcheck_command(capsys):
    rc = main(["gradcheck"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "all 63 parameter tensors pass" in out


def test_ablate_emits_rows_and_medians(tmp_path):
    rc = main(["ablate", "--out", str(tmp_path / "abl"), "--seeds", "1",
               "--epochs", "1", "--space", "encoder", "--corpus", "b"])
    assert rc == 0
    table = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    variants = [(r["variant"], r["seed"]) for r in table["rows"]]
    assert ("local", 0) in variants and ("global", 0) in variants
    assert ("local", "median") in variants and ("global", "median") in variants
    assert "local" in table["medians"] and "global" in table["medians"]
