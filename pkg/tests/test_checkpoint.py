"""Checkpoint binary format: round trips, corruption handling, rebuild."""

import numpy as np
import pytest

from rvsm.checkpoint import (
    CheckpointError,
    load_checkpoint,
    network_from_params,
    save_checkpoint,
)
from rvsm.nn import build_network


def test_round_trip_preserves_values_and_order(tmp_path):
    net = build_network(2, 8, seed=0, filters=2, dense_width=4)
    params = net.parameters()
    path = tmp_path / "model.rvsm"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert list(loaded.keys()) == list(params.keys())
    for key in params:
        np.testing.assert_allclose(loaded[key], params[key], atol=1e-7)
        assert loaded[key].dtype == np.float64


def test_exact_zeros_survive(tmp_path):
    params = {"dense.weight": np.array([[0.0, 0.25, -1.5, 0.0]]),
              "dense.bias": np.zeros(4)}
    path = tmp_path / "model.rvsm"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert np.count_nonzero(loaded["dense.weight"] == 0) == 2
    # float32-exact values come back bit-equal
    np.testing.assert_array_equal(loaded["dense.weight"], params["dense.weight"])


def test_magic_and_version_checks(tmp_path):
    path = tmp_path / "model.rvsm"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    net = build_network(2, 8, seed=0, filters=2, dense_width=4)
    save_checkpoint(path, net.parameters())
    data = bytearray(path.read_bytes())
    data[4] = 99  # bump the version field
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncation_detected(tmp_path):
    net = build_network(2, 8, seed=0, filters=2, dense_width=4)
    path = tmp_path / "model.rvsm"
    save_checkpoint(path, net.parameters())
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_byte_identical_rewrites(tmp_path):
    net = build_network(2, 8, seed=3, filters=2, dense_width=4)
    a, b = tmp_path / "a.rvsm", tmp_path / "b.rvsm"
    save_checkpoint(a, net.parameters())
    save_checkpoint(b, net.parameters())
    assert a.read_bytes() == b.read_bytes()


def test_network_from_params_runs_forward(tmp_path):
    net = build_network(2, 16, seed=5, filters=2, dense_width=4)
    path = tmp_path / "model.rvsm"
    save_checkpoint(path, net.parameters())
    rebuilt = network_from_params(load_checkpoint(path))
    x = np.random.default_rng(0).uniform(-1, 1, size=(3, 1, 16, 16))
    ours = net.forward(x)
    theirs = rebuilt.forward(x)
    # float32 storage costs ~1e-7 relative precision
    np.testing.assert_allclose(ours, theirs, atol=1e-5)


def test_network_from_params_rejects_strangers():
    with pytest.raises(CheckpointError):
        network_from_params({"mystery.weight": np.zeros((2, 2))})
