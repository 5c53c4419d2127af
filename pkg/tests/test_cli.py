from __future__ import annotations

import json
from pathlib import Path

import pytest

from semlatent.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from semlatent.smiles import VOCAB


def test_canon(capsys):
    assert run(["canon", "OCC"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "CCO"


def test_ged(capsys):
    assert run(["ged", "--max", "3", "CC", "CCO"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "1"
    assert run(["ged", "--max", "1", "C", "CCC"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "EXCEEDS"


def test_usage_and_data_errors(capsys, tmp_path):
    assert run(["nonsense"]) == EXIT_USAGE
    assert run(["ged", "--bogus", "C", "C"]) == EXIT_USAGE
    assert run(["canon", "C1CC"]) == EXIT_DATA
    assert run(["gen-dataset", "--anchors", str(tmp_path / "missing.smi")]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "missing.smi" in err


def test_env_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SEMLATENT_OUT_DIR", str(tmp_path / "env"))
    assert run(["gen-corpus", "--n", "5", "--seed", "1"]) == EXIT_OK
    assert (tmp_path / "env" / "corpus.smi").is_file()
    assert (tmp_path / "env" / "corpus.smi.manifest.json").is_file()


@pytest.fixture
def anchors(tmp_path) -> Path:
    path = tmp_path / "anchors.smi"
    assert run(["gen-corpus", "--n", "40", "--seed", "3", "--out", str(path)]) == EXIT_OK
    return path


def test_gen_dataset_byte_identical(tmp_path, anchors):
    outs = []
    for name in ("a.jsonl", "b.jsonl"):
        out = tmp_path / name
        assert run(["gen-dataset", "--anchors", str(anchors), "--k", "4", "--seed", "7", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    manifest = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["vocab_sha256"] == VOCAB.sha256
    assert "timestamp" not in json.dumps(manifest)


def test_pipeline_stages(tmp_path, anchors, capsys):
    ds, fl, ch = tmp_path / "ds.jsonl", tmp_path / "filtered.jsonl", tmp_path / "chains.jsonl"
    ckpt, codes = tmp_path / "m.pt", tmp_path / "codes.csv"
    assert run(["gen-dataset", "--anchors", str(anchors), "--k", "4", "--seed", "1", "--out", str(ds)]) == 0
    assert run(["filter", "--in", str(ds), "--chi2-q", "0.99", "--out", str(fl)]) == 0
    assert "kept" in capsys.readouterr().out
    assert run(["filter", "--in", str(ds), "--threshold", "1e9", "--out", str(fl)]) == 0
    assert run(["gen-supermutants", "--anchors", str(anchors), "--n", "3", "--seed", "1", "--out", str(ch)]) == 0
    assert run(["train", "--data", str(fl), "--lambda", "0.5", "--latent", "4", "--layers", "1",
                "--hidden", "16", "--heads", "2", "--steps", "3", "--seed", "2", "--out", str(ckpt)]) == 0
    assert run(["encode", "--ckpt", str(ckpt), "--in", str(anchors), "--out", str(codes)]) == 0
    header = codes.read_text().splitlines()[0]
    assert header == "smiles,z0,z1,z2,z3"
    capsys.readouterr()
    assert run(["generate", "--ckpt", str(ckpt), "--smiles", "CCO", "--mode", "sample", "--n", "2"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2
    assert run(["interpolate", "--ckpt", str(ckpt), "CCO", "CCN", "--steps", "3"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    out_dir = tmp_path / "reports"
    assert run(["eval-ged", "--ckpt", str(ckpt), "--chains", str(ch), "--out-dir", str(out_dir), "--tag", "joint"]) == 0
    summary = json.loads((out_dir / "ged_joint.json").read_text())
    assert summary["model_tag"] == "joint" and summary["latent_dim"] == 4
    pairs = tmp_path / "pairs.txt"
    pairs.write_text("CCO CCN\nCCCC CCOC\n")
    assert run(["eval-interp", "--ckpt", str(ckpt), "--pairs", str(pairs), "--samples", "5",
                "--out-dir", str(out_dir)]) == 0
    assert run(["eval-prop", "--ckpt", str(ckpt), "--in", str(anchors), "--draws", "2", "--draw-size", "20",
                "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "prop_model.csv").read_text().count("\n") == 11


def test_vocab_mismatch_refused(tmp_path, anchors):
    ds = tmp_path / "ds.jsonl"
    assert run(["gen-dataset", "--anchors", str(anchors), "--k", "2", "--out", str(ds)]) == 0
    manifest = tmp_path / "ds.jsonl.manifest.json"
    data = json.loads(manifest.read_text())
    data["vocab_sha256"] = "0" * 64
    manifest.write_text(json.dumps(data))
    assert run(["filter", "--in", str(ds), "--out", str(tmp_path / "f.jsonl")]) == EXIT_DATA


def test_reproduce_smoke(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["reproduce", "--scale", "smoke", "--seed", "3", "--out-dir", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    tags = [m["model_tag"] for m in report["models"]]
    assert tags == ["untrained", "naive", "joint", "contra"]
    assert "rho=" in capsys.readouterr().out
