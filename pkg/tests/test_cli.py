"""Command-line surface: exit codes, artifacts, reproducibility."""

import json
import os

import pytest

from stn import cli, glyphlang
from stn.params import load_checkpoint


def run(*argv):
    return cli.run(list(argv))


def test_unknown_subcommand_usage_error(capsys):
    assert run("frobnicate") == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_missing_required_flag(capsys):
    assert run("gen-data", "--count", "3") == 1


def test_unknown_flag_rejected(tmp_path, capsys):
    assert run("gen-data", "--count", "3", "--out", str(tmp_path / "d"),
               "--bogus", "1") == 1
    assert "--bogus" in capsys.readouterr().err


def test_gen_data_reproducible(tmp_path):
    out1, out2 = str(tmp_path / "d1"), str(tmp_path / "d2")
    assert run("gen-data", "--count", "4", "--seed", "5", "--out", out1) == 0
    assert run("gen-data", "--count", "4", "--seed", "5", "--out", out2) == 0
    assert os.path.exists(os.path.join(out1, "run_config.json"))
    labels1 = open(os.path.join(out1, "labels.txt")).read()
    labels2 = open(os.path.join(out2, "labels.txt")).read()
    assert labels1 == labels2
    img1 = open(os.path.join(out1, "images", "00000.pgm"), "rb").read()
    img2 = open(os.path.join(out2, "images", "00000.pgm"), "rb").read()
    assert img1 == img2
    config = json.load(open(os.path.join(out1, "run_config.json")))
    assert config["count"] == 4 and config["seed"] == 5


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """One tiny end-to-end CLI run shared by the remaining tests."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data")
    ckpt = str(root / "out" / "model.ckpt")
    assert run("gen-data", "--count", "12", "--seed", "3", "--out", data) == 0
    assert run("train", "--data", data, "--variant", "stnm", "--epochs", "2",
               "--seed", "1", "--out", ckpt, "--batch-size", "8") == 0
    return root, data, ckpt


def test_train_artifacts(small_run):
    root, data, ckpt = small_run
    assert os.path.exists(ckpt)
    stem = ckpt[:-len(".ckpt")]
    metrics = open(stem + "_metrics.csv").read().splitlines()
    assert metrics[0] == "epoch,train_loss,val_loss,val_token_acc"
    assert len(metrics) == 3
    config = json.load(open(stem + "_config.json"))
    assert config["variant"] == "stnm" and config["epochs"] == 2
    store, extra = load_checkpoint(ckpt)
    assert extra["variant"] == "stnm"


def test_eval_prints_metrics_and_reads_only(small_run, capsys):
    root, data, ckpt = small_run
    mtimes = {p: os.path.getmtime(os.path.join(data, p))
              for p in ("labels.txt",)}
    assert run("eval", "--ckpt", ckpt, "--data", data) == 0
    out = capsys.readouterr().out
    assert "token accuracy" in out and "mean reward" in out
    for p, t in mtimes.items():
        assert os.path.getmtime(os.path.join(data, p)) == t


def test_eval_uses_env_data_dir(small_run, capsys, monkeypatch):
    root, data, ckpt = small_run
    monkeypatch.setenv("STN_DATA_DIR", data)
    assert run("eval", "--ckpt", ckpt) == 0


def test_refine_runs_and_writes_curve(small_run):
    root, data, ckpt = small_run
    out2 = str(root / "out" / "refined.ckpt")
    assert run("refine", "--ckpt", ckpt, "--data", data, "--iters", "2",
               "--seed", "0", "--out", out2, "--batch-size", "4") == 0
    curve = open(out2[:-len(".ckpt")] + "_rewards.csv").read().splitlines()
    assert curve[0] == "iteration,mean_reward,compile_rate,value_loss"
    assert len(curve) == 3
    store, _ = load_checkpoint(out2)
    assert store.frozen == {"encoder", "history"}


def test_visualize_overlays_and_trajectory(small_run, tmp_path):
    root, data, ckpt = small_run
    out = str(tmp_path / "viz")
    image_path = os.path.join(data, "images", "00001.pgm")
    assert run("visualize", "--ckpt", ckpt, "--image", image_path,
               "--out", out) == 0
    lines = open(os.path.join(out, "tokens.txt")).read().splitlines()
    overlays = sorted(f for f in os.listdir(out) if f.endswith(".pgm"))
    assert len(overlays) == len(lines)
    for t, (fname, line) in enumerate(zip(overlays, lines)):
        assert fname.startswith("step_%03d_" % t)
        name, x, y, sigma = line.split("\t")
        assert name in glyphlang.TOKEN_TO_ID
        # six-decimal round trip
        assert float(x) == float("%.6f" % float(x))
        heat = glyphlang.read_pgm(os.path.join(out, fname))
        assert heat.min() >= 0 and heat.max() <= 255


def test_runtime_failure_exit_code(tmp_path, capsys):
    assert run("eval", "--ckpt", str(tmp_path / "nope.ckpt"),
               "--data", str(tmp_path)) == 2


def test_gradcheck_exit_zero(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out
    assert "pass" in out and "FAIL" not in out
