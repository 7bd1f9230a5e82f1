import csv
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from emgnet import __version__
from emgnet.cli import main
from emgnet.layers import build_compact_cnn, parameter_count


def write_config(path, **overrides):
    doc = {
        "device": "myo",
        "model": "compact_cnn",
        "dataset": "data",
        "num_folds": 2,
        "seed": 1,
        "increment_ms": 50.0,
        "train": {"max_epochs": 2, "batch_size": 32},
        "bench": {"trials": 2, "predictions_per_trial": 5, "warmup_predictions": 1},
        "synth": {"num_gestures": 3, "hold_seconds": 1.0, "seed": 2},
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "config.json")
    assert main(["synth", "--config", str(cfg)]) == 0
    return root, cfg


def report_schema():
    return json.loads(resources.files("emgnet").joinpath("schemas/report.schema.json").read_text())


def test_synth_writes_dataset(workspace):
    root, _ = workspace
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    assert manifest["channels"] == 8 and len(manifest["gesture_names"]) == 3
    assert len(list((root / "data").glob("g*_r*.csv"))) == 18


def test_synth_default_count(tmp_path):
    assert main(["synth", "--output", str(tmp_path / "d")]) == 0
    assert len(list((tmp_path / "d").glob("g*_r*.csv"))) == 90


def test_synth_rerun_identical(workspace, tmp_path):
    _, cfg = workspace
    for name in ("a", "b"):
        assert main(["synth", "--config", str(cfg), "--output", str(tmp_path / name)]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_synth_seed_override(workspace, tmp_path):
    _, cfg = workspace
    main(["synth", "--config", str(cfg), "--output", str(tmp_path / "a")])
    main(["synth", "--config", str(cfg), "--seed", "99", "--output", str(tmp_path / "b")])
    assert (tmp_path / "a" / "g1_r1.csv").read_bytes() != (tmp_path / "b" / "g1_r1.csv").read_bytes()


def test_synth_unwritable_path(workspace, tmp_path, capsys):
    _, cfg = workspace
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--config", str(cfg), "--output", str(blocker / "sub")]) == 2
    assert "error" in capsys.readouterr().err.lower()


@pytest.mark.parametrize("model", ["compact_cnn", "svm_mdwt"])
def test_run_experiment_report(workspace, model, tmp_path):
    root, _ = workspace
    cfg = write_config(root / f"{model}.json", model=model)
    assert main(["run-experiment", "--config", str(cfg), "--output", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    jsonschema.validate(report, report_schema())
    assert len(report["folds"]) == 2
    assert 0.0 <= report["pooled_macro_accuracy"] <= 1.0
    if model == "compact_cnn":
        assert report["model"]["parameter_count"] == parameter_count(build_compact_cnn("myo", num_classes=3))
        assert (tmp_path / "train_log_fold00.jsonl").exists()


def test_run_experiment_deterministic(workspace, tmp_path):
    _, cfg = workspace
    for name in ("a", "b"):
        assert main(["run-experiment", "--config", str(cfg), "--output", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_shipped_schema_copy_matches():
    from pathlib import Path

    docs = Path(__file__).resolve().parents[1] / "docs" / "report.schema.json"
    assert json.loads(docs.read_text()) == report_schema()


def test_train_then_eval(workspace, tmp_path, capsys):
    _, cfg = workspace
    assert main(["train", "--config", str(cfg), "--output", str(tmp_path)]) == 0
    assert (tmp_path / "model.bin").exists()
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert len(lines) >= 1 and "epoch" in json.loads(lines[0])
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg), "--model", str(tmp_path / "model.bin")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0.0 <= doc["macro_accuracy"] <= 1.0


def test_eval_svm_model(workspace, tmp_path, capsys):
    root, _ = workspace
    cfg = write_config(root / "svm_eval.json", model="svm_mdwt")
    assert main(["train", "--config", str(cfg), "--output", str(tmp_path)]) == 0
    assert main(["eval", "--config", str(cfg), "--model", str(tmp_path / "model.bin"), "--output", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "eval.json").read_text())["fold"]["fold_id"] == 0


def test_eval_missing_model(workspace, tmp_path, capsys):
    _, cfg = workspace
    assert main(["eval", "--config", str(cfg), "--model", str(tmp_path / "nope.bin")]) == 2
    assert "nope.bin" in capsys.readouterr().err


def test_features_csv(workspace, tmp_path):
    _, cfg = workspace
    out = tmp_path / "f.csv"
    assert main(["features", "--config", str(cfg), "--output", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][0] == "ch0_d1" and rows[0][-2:] == ["gesture", "repetition"]
    assert len(rows[0]) == 8 * 4 + 2
    # 3 gestures x 6 reps, (200 - 30) // 10 + 1 windows each
    assert len(rows) - 1 == 18 * 18


def test_bench_table(workspace, capsys):
    _, cfg = workspace
    assert main(["bench", "--config", str(cfg), "--models", "compact_cnn,generic_cnn", "--stub-ms", "0.2"]) == 0
    out = capsys.readouterr().out
    assert "5,889" in out and "193,455" in out and "stub" in out


def test_bench_missing_model(workspace):
    _, cfg = workspace
    assert main(["bench", "--config", str(cfg), "--model", "/nonexistent/model.bin"]) == 2


def test_usage_errors(workspace, tmp_path):
    _, cfg = workspace
    assert main(["frobnicate"]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    bad = write_config(tmp_path / "bad.json", model="random_forest")
    assert main(["train", "--config", str(bad)]) == 1
    assert main(["train", "--config", str(cfg), "--bogus"]) == 1


def test_data_error_device_mismatch(workspace):
    root, _ = workspace
    cfg = write_config(root / "delsys.json", device="delsys")
    assert main(["features", "--config", str(cfg)]) == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "emgnet.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "emgnet.cli", "eval", "--model"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr
