import json
import subprocess
import sys

import numpy as np
import pytest

from helpers import run_pipeline
from psmpose import cli, harness
from psmpose.data import read_dataset

STAGES = ["raw", "external", "aligned", "dataset", "features", "pretrain", "finetune", "eval", "report",
          "baseline", "tcn", "transfer", "transfer_report"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipe"))


def test_pipeline_artifacts(pipeline):
    assert len(list(pipeline["raw"].glob("P*/meta.json"))) == 4
    assert (pipeline["aligned"] / "sync.csv").read_text().count("\n") == 5
    ds = read_dataset(pipeline["dataset"])
    assert ds.geometry.shape == (18, 18) and len(ds.patient_ids) == 4
    assert (pipeline["features"] / "features.csv").exists()
    assert (pipeline["pretrain"] / "loss.csv").read_text().count("\n") == 4
    for name in ("sweep.csv", "predictions.csv", "best.json", "model.npz"):
        assert (pipeline["finetune"] / name).exists()
    assert {p.name for p in pipeline["eval"].glob("confusion_*.csv")} == {"confusion_0.csv", "confusion_1.csv"}
    assert (pipeline["report"] / "confusion.svg").read_text().startswith("<svg")
    summary = json.loads((pipeline["transfer_report"] / "summary.json").read_text())
    assert set(summary) == {"scratch", "pretrained"}
    t = json.loads((pipeline["transfer"] / "transfer.json").read_text())
    assert t["scratch_backbone_sha256"] != t["pretrained_backbone_sha256"]


def test_manifest_contents(pipeline):
    m = json.loads((pipeline["finetune"] / cli.MANIFEST).read_text())
    assert m["command"] == "finetune" and m["seed"] == 2
    assert m["params"]["folds"] == 2
    assert all(p.startswith("/") for p in m["inputs"])
    assert set(m["checksums"]) >= {"predictions.csv", "sweep.csv", "best.json"}


@pytest.mark.parametrize("stage", STAGES)
def test_replay_reproduces_bytes(pipeline, stage, tmp_path):
    fresh = cli.replay(pipeline[stage] / cli.MANIFEST, tmp_path / "again")
    recorded = json.loads((pipeline[stage] / cli.MANIFEST).read_text())
    assert fresh["checksums"] == recorded["checksums"] and fresh["checksums"]


def test_replay_detects_tampering(pipeline, tmp_path):
    m = json.loads((pipeline["features"] / cli.MANIFEST).read_text())
    m["checksums"]["features.csv"] = "0" * 64
    (tmp_path / "m.json").write_text(json.dumps(m))
    with pytest.raises(RuntimeError, match="features.csv"):
        cli.replay(tmp_path / "m.json", tmp_path / "out")
    assert cli.main(["replay", str(tmp_path / "m.json"), "--out", str(tmp_path / "out2")]) == 1


def test_synth_twice_identical(tmp_path):
    a = cli.run(["synth", "--seed", "9", "--patients", "2", "--duration", "600", "--out", str(tmp_path / "a")])
    b = cli.run(["synth", "--seed", "9", "--patients", "2", "--duration", "600", "--out", str(tmp_path / "b")])
    assert a["checksums"] == b["checksums"]


def test_eval_perfect_predictions(tmp_path, capsys):
    src = tmp_path / "ft"
    src.mkdir()
    truth = np.repeat(np.arange(4), 3)
    res = harness.CellResult(0, 0, {}, harness.evaluate(truth, truth), np.array(["P1"] * 12), np.arange(12.0), truth, truth)
    cli.write_predictions(src / "predictions.csv", [res])
    assert cli.main(["eval", "--in", str(src), "--out", str(tmp_path / "ev")]) == 0
    assert "accuracy 1.000" in capsys.readouterr().out
    rows = harness.read_results(tmp_path / "ev" / "results.csv")
    assert rows[0]["accuracy"] == 1.0


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path / "x")]) == 2  # --seed is required
    assert cli.main(["sync", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "y")]) == 2
    assert cli.main(["synth", "--seed", "1", "--patients", "0", "--out", str(tmp_path / "z")]) == 2
    assert cli.main(["bogus"]) == 2
    assert cli.main(["features", "--in", str(tmp_path), "--out", str(tmp_path / "f")]) == 2
    assert "error" in capsys.readouterr().err


def test_too_many_folds_is_usage_error(pipeline, tmp_path):
    argv = ["train-baseline", "--seed", "0", "--folds", "9", "--in", str(pipeline["dataset"]), "--out", str(tmp_path)]
    assert cli.main(argv) == 2


def test_data_dir_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.DATA_DIR_ENV, str(tmp_path))
    cli.run(["synth", "--seed", "1", "--patients", "1", "--duration", "900"])
    assert (tmp_path / "raw" / "P000" / "meta.json").exists()


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "psmpose.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("psmpose ")
