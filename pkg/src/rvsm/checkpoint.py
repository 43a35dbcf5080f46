"""Binary checkpoint format for trained networks.

Layout: magic b"RVSM", format version (u32), tensor count (u32), then a
table of (name length u32, name utf-8, rank u32, dims u32...) and finally
the tensor data concatenated in declaration order as little-endian
float32.  All integers are little-endian.  Exact zeros survive the
float32 round trip, so sparsity statistics are preserved.
"""

from __future__ import annotations

import struct

import numpy as np

from . import nn

MAGIC = b"RVSM"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable or structurally invalid checkpoint files."""


def save_checkpoint(path, params: dict) -> None:
    """Write named tensors (dict preserving declaration order) to disk."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            arr = np.asarray(tensor)
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for tensor in params.values():
            fh.write(np.asarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    """Read named tensors back as float64 arrays in declaration order."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        offset = 12
        table = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            table.append((name, shape))
        params = {}
        for name, shape in table:
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            params[name] = arr.reshape(shape).astype(np.float64)
        if offset != len(data):
            raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    except CheckpointError:
        raise
    except (struct.error, IndexError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    return params


def _conv_stack_from_params(params: dict):
    """Rebuild the fixed three-stage architecture from a parameter table."""
    expected = ["conv1", "conv2", "conv3", "dense", "output"]
    names = []
    for key in params:
        if not key.endswith(".weight"):
            continue
        names.append(key[: -len(".weight")])
    if names != expected:
        raise CheckpointError(f"unexpected layer table {names}, expected {expected}")
    for name in expected:
        if f"{name}.bias" not in params:
            raise CheckpointError(f"missing bias tensor for layer {name!r}")
    return expected


def network_from_params(params: dict) -> "nn.Network":
    """Network instance wired from checkpoint tensors.

    Only the stock conv1..conv3/dense/output topology is recognized; the
    input size is recovered from the dense width.
    """
    names = _conv_stack_from_params(params)
    rng = np.random.default_rng(0)  # shapes are overwritten below
    filters = params["conv1.weight"].shape[0]
    dense_in, dense_width = params["dense.weight"].shape
    num_classes = params["output.weight"].shape[1]
    layers = [
        nn.Conv2d("conv1", params["conv1.weight"].shape[1], filters, rng), nn.ReLU(), nn.MaxPool(),
        nn.Conv2d("conv2", filters, params["conv2.weight"].shape[0], rng), nn.ReLU(), nn.MaxPool(),
        nn.Conv2d("conv3", params["conv2.weight"].shape[0], params["conv3.weight"].shape[0], rng),
        nn.ReLU(), nn.MaxPool(),
        nn.Flatten(),
        nn.Dense("dense", dense_in, dense_width, rng), nn.ReLU(),
        nn.Dense("output", dense_width, num_classes, rng),
    ]
    spatial = int(round(np.sqrt(dense_in / params["conv3.weight"].shape[0])))
    net = nn.Network(layers, params["conv1.weight"].shape[1], spatial, num_classes, seed=0)
    live = net.parameters()
    for key, tensor in params.items():
        if live[key].shape != tensor.shape:
            raise CheckpointError(f"{key}: shape {tensor.shape} does not fit the architecture")
        live[key][...] = tensor
    return net
