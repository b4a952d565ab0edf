import csv
import json
import subprocess
import sys

import pytest

from myoshift.checkpoint import param_digests, read_manifest
from myoshift.cli import main
from myoshift.data import load_dataset

SMALL = ["--trials", "4", "--frames", "60", "--subjects", "2"]
TINY_MODEL = ["--hidden", "6", "--layers", "1", "--head-units", "8", "--epochs", "2", "--batch", "32"]
WINDOW = ["--window-ms", "100", "--stride-ms", "100"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--shift", "rotation", *SMALL]) == 0
    assert main(["pretrain", "--data", str(root / "data" / "source"), "--subject", "1", "--session", "1",
                 "--out", str(root / "pre"), "--split", "intra", *TINY_MODEL, *WINDOW]) == 0
    return root


def test_synth_default_spec(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)]) == 0
    ds = load_dataset(tmp_path / "source")
    assert ds.meta.gestures == 5 and len(ds.trials()) == 10 and len(ds.subjects) == 3
    assert not (tmp_path / "target").exists()
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 0


def test_synth_shift_writes_two_manifests(workspace):
    assert (workspace / "data" / "source" / "manifest.json").exists()
    assert (workspace / "data" / "target" / "manifest.json").exists()
    assert (workspace / "data" / "shift.npz").exists()


@pytest.mark.parametrize("argv", [
    ["synth", "--gestures", "0"],
    ["synth", "--channels", "2", "--gestures", "9"],
    ["synth", "--shift", "shear"],
])
def test_invalid_spec_exit_code(tmp_path, argv):
    try:
        code = main([*argv, "--out", str(tmp_path)])
    except SystemExit as exc:  # argparse rejects unknown choices itself
        code = exc.code
    assert code == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "trials": 2, "frames": 30}))
    assert main(["synth", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "o")]) == 0
    effective = json.loads((tmp_path / "o" / "config.json").read_text())
    assert effective["seed"] == 6 and effective["trials"] == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 2


def test_pretrain_outputs(workspace):
    pre = workspace / "pre"
    assert (pre / "checkpoint.json").exists() and (pre / "history.csv").exists()
    report = json.loads((pre / "report.json").read_text())
    assert 0.0 <= report["mean_accuracy"] <= 100.0


def test_pretrain_rerun_same_checksum(workspace, tmp_path):
    assert main(["pretrain", "--data", str(workspace / "data" / "source"), "--subject", "1", "--session", "1",
                 "--out", str(tmp_path), "--split", "intra", *TINY_MODEL, *WINDOW]) == 0
    assert read_manifest(tmp_path / "checkpoint.json")["sha256"] == \
        read_manifest(workspace / "pre" / "checkpoint.json")["sha256"]


def test_adapt_vs_finetune_checkpoint_diff(workspace, tmp_path):
    target = ["--data", str(workspace / "data" / "target"), "--subject", "1",
              "--checkpoint", str(workspace / "pre" / "checkpoint.json"), *WINDOW, "--epochs", "2", "--batch", "32"]
    assert main(["adapt", *target, "--out", str(tmp_path / "a")]) == 0
    assert main(["finetune", *target, "--out", str(tmp_path / "f")]) == 0
    before = param_digests(workspace / "pre" / "checkpoint.json")
    adapted = param_digests(tmp_path / "a" / "checkpoint.json")
    tuned = param_digests(tmp_path / "f" / "checkpoint.json")
    assert {n for n in before if before[n] != adapted[n]} == {"adapt.M", "adapt.b"}
    assert {n for n in before if before[n] != tuned[n]} == set(before)
    assert json.loads((tmp_path / "a" / "report.json").read_text())["scenario"] == 3


def test_eval_does_not_train(workspace, capsys):
    ckpt = workspace / "pre" / "checkpoint.json"
    before = read_manifest(ckpt)["sha256"]
    code = main(["eval", "--data", str(workspace / "data" / "target"), "--subject", "1",
                 "--checkpoint", str(ckpt), *WINDOW, "--scenario", "1"])
    assert code == 0 and "accuracy:" in capsys.readouterr().out
    assert read_manifest(ckpt)["sha256"] == before


def test_channel_mismatch_exit_code(workspace, tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--channels", "10", *SMALL]) == 0
    code = main(["eval", "--data", str(tmp_path / "source"), "--checkpoint",
                 str(workspace / "pre" / "checkpoint.json"), *WINDOW])
    assert code == 3
    assert "8 input channels" in capsys.readouterr().err


def test_missing_inputs(tmp_path):
    assert main(["eval", "--data", str(tmp_path / "none"), "--checkpoint", "x.json"]) == 1
    assert main(["adapt", "--out", str(tmp_path)]) == 2


def test_sweep_csv_has_fifteen_rows(workspace, tmp_path):
    code = main(["sweep", "--data", str(workspace / "data" / "target"), "--subject", "1",
                 "--checkpoint", str(workspace / "pre" / "checkpoint.json"), *WINDOW,
                 "--epochs", "1", "--batch", "32", "--out", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 15


def test_gradcheck_exits_zero(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "gradcheck.json").read_text())["max_rel_err"] < 1e-4
    assert main(["gradcheck", "--precision", "f32"]) == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "myoshift", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "myoshift" in proc.stdout
