"""Command line interface: subcommands, config handling, exit codes."""

import os

import numpy as np
import pytest

from rvsm.cli import EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from rvsm.dataset import load_dataset

TINY_GEN = ["--n-train", "6", "--n-test", "4", "--size", "32", "--seed", "3"]
TINY_TRAIN = ["--epochs", "2", "--batch-size", "4", "--eta", "0.1", "--seed", "1"]


@pytest.fixture()
def tiny_dataset(tmp_path):
    data_dir = tmp_path / "data"
    assert main(["generate", "--out", str(data_dir)] + TINY_GEN) == EXIT_OK
    return data_dir


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_generate_structure(tiny_dataset):
    train = load_dataset(tiny_dataset / "train")
    test = load_dataset(tiny_dataset / "test")
    assert len(train) == 6 and len(test) == 4
    assert np.bincount(train.labels).tolist() == [3, 3]
    assert train.images.shape[1:] == (32, 32)


def test_generate_reproducible(tmp_path):
    for sub in ("a", "b"):
        assert main(["generate", "--out", str(tmp_path / sub)] + TINY_GEN) == EXIT_OK
    for split in ("train", "test"):
        a = read_bytes(tmp_path / "a" / split / "manifest.csv")
        b = read_bytes(tmp_path / "b" / split / "manifest.csv")
        assert a == b
        a_img = read_bytes(tmp_path / "a" / split / "sample_00000.pgm")
        b_img = read_bytes(tmp_path / "b" / split / "sample_00000.pgm")
        assert a_img == b_img


def test_generate_rejects_bad_params(tmp_path):
    code = main(["generate", "--out", str(tmp_path / "x"), "--shaky-amplitude", "-2"])
    assert code == EXIT_USAGE


def test_train_writes_artifacts(tiny_dataset, tmp_path):
    run = tmp_path / "run"
    code = main(["train", "--data", str(tiny_dataset), "--out", str(run)] + TINY_TRAIN)
    assert code == EXIT_OK
    for artifact in ("checkpoint.rvsm", "epochs.csv", "histogram_dense.csv", "report.txt"):
        assert (run / artifact).is_file(), artifact
    report = (run / "report.txt").read_text()
    assert "grad_residual" in report
    assert "sign_changes_conv1" in report
    epochs = (run / "epochs.csv").read_text().splitlines()
    assert epochs[0] == "epoch,train_loss,test_loss,accuracy,sparsity"
    assert len(epochs) == 3


def test_train_deterministic(tiny_dataset, tmp_path):
    args = ["--data", str(tiny_dataset)] + TINY_TRAIN
    assert main(["train", "--out", str(tmp_path / "r1")] + args) == EXIT_OK
    assert main(["train", "--out", str(tmp_path / "r2")] + args) == EXIT_OK
    for name in ("checkpoint.rvsm", "epochs.csv", "report.txt", "histogram_dense.csv"):
        assert read_bytes(tmp_path / "r1" / name) == read_bytes(tmp_path / "r2" / name), name


def test_train_lambda_zero_reports_dense_baseline(tiny_dataset, tmp_path):
    run = tmp_path / "run"
    code = main(["train", "--data", str(tiny_dataset), "--out", str(run),
                 "--lambda", "0"] + TINY_TRAIN)
    assert code == EXIT_OK
    for line in (run / "report.txt").read_text().splitlines():
        if line.startswith("final_sparsity"):
            assert float(line.split("=")[1]) == 0.0
            break
    else:
        pytest.fail("final_sparsity missing from report")


def test_train_sgd_penalty_baseline(tiny_dataset, tmp_path):
    run = tmp_path / "run"
    code = main(["train", "--data", str(tiny_dataset), "--out", str(run),
                 "--algorithm", "sgd-penalty", "--penalty", "tl1", "--a", "0.01"]
                + TINY_TRAIN)
    assert code == EXIT_OK
    report = (run / "report.txt").read_text()
    assert "bucket_dense_1e-10" in report
    assert "u_residual" not in report  # no splitting variable in this mode


def test_train_rejects_l0_for_sgd_penalty(tiny_dataset, tmp_path):
    code = main(["train", "--data", str(tiny_dataset), "--out", str(tmp_path / "r"),
                 "--algorithm", "sgd-penalty", "--penalty", "l0"] + TINY_TRAIN)
    assert code == EXIT_USAGE


def test_train_divergence_exit_code(tiny_dataset, tmp_path, capsys):
    code = main(["train", "--data", str(tiny_dataset), "--out", str(tmp_path / "r"),
                 "--eta", "1e9", "--epochs", "3", "--batch-size", "4", "--seed", "1"])
    assert code == EXIT_DIVERGED
    assert "iteration" in capsys.readouterr().err


def test_train_missing_dataset(tmp_path):
    code = main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]
                + TINY_TRAIN)
    assert code == EXIT_IO


def test_eval_outputs_and_determinism(tiny_dataset, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--data", str(tiny_dataset), "--out", str(run)] + TINY_TRAIN)
    args = ["eval", "--checkpoint", str(run / "checkpoint.rvsm"),
            "--data", str(tiny_dataset / "test")]
    assert main(args) == EXIT_OK
    first = capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == first
    assert "accuracy = " in first
    assert "sparsity_dense = " in first


def test_eval_rejects_corrupt_checkpoint(tiny_dataset, tmp_path):
    bad = tmp_path / "bad.rvsm"
    bad.write_bytes(b"JUNKJUNKJUNK")
    code = main(["eval", "--checkpoint", str(bad), "--data", str(tiny_dataset / "test")])
    assert code == EXIT_IO


def test_report_roundtrip(tiny_dataset, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--data", str(tiny_dataset), "--out", str(run)] + TINY_TRAIN)
    capsys.readouterr()
    assert main(["report", "--run", str(run)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "per-epoch metrics" in out and "summary" in out


def test_report_on_empty_dir(tmp_path):
    assert main(["report", "--run", str(tmp_path)]) == EXIT_IO


def test_config_file_and_flag_precedence(tiny_dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# tiny run\n"
        f"data = {tiny_dataset}\n"
        "epochs = 2\n"
        "batch_size = 4\n"
        "eta = 0.1\n"
        "seed = 1\n"
        "lambda = 0.001\n"
    )
    run1, run2 = tmp_path / "c1", tmp_path / "c2"
    assert main(["train", "--config", str(cfg), "--out", str(run1)]) == EXIT_OK
    # the flag overrides the file's lambda
    assert main(["train", "--config", str(cfg), "--out", str(run2),
                 "--lambda", "0.001"]) == EXIT_OK
    assert read_bytes(run1 / "checkpoint.rvsm") == read_bytes(run2 / "checkpoint.rvsm")
    text1 = (run1 / "report.txt").read_text()
    assert "lambda = 0.001" in text1


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mystery_knob = 7\n")
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"),
                 "--data", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "mystery_knob" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert main(["train", "--epochs", "not_a_number", "--data", "x", "--out", "y"]) == EXIT_USAGE


def test_missing_required_setting(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "r")] + TINY_TRAIN) == EXIT_USAGE
    assert "data" in capsys.readouterr().err
