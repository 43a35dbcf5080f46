"""Command line entry point: generate / train / eval / report.

Every setting can come from a flat ``key = value`` config file (``#``
comments allowed) or a ``--key value`` flag; flags win.  Unknown keys are
rejected by name.  All randomness flows from the single ``seed`` setting
through named streams, so a run is reproducible byte-for-byte from its
config.

Exit codes: 0 success, 1 usage or config error, 2 I/O or format error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, network_from_params, save_checkpoint
from .curvegen import AugmentParams, as_training_arrays, generate_dataset
from .dataset import DatasetError, load_dataset, save_dataset
from .metrics import (
    BUCKET_SCALES,
    accuracy,
    sign_changes,
    sparsity,
    sparsity_buckets,
    weight_histogram,
)
from .nn import build_default_network
from .prox import PenaltySpec
from .solver import (
    DivergenceError,
    RvsmConfig,
    deployed_weights,
    equilibrium_residuals,
    penalized_sgd_train,
    rvsm_train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    """Bad or unknown configuration key/value."""


def _boolean(text):
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _name_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


# key -> (converter, default); one schema per subcommand
GENERATE_SCHEMA = {
    "out": (str, None),
    "n_train": (int, 5000),
    "n_test": (int, 1000),
    "seed": (int, 0),
    "size": (int, 100),
    "rotation_max_deg": (float, 20.0),
    "shear_max": (float, 0.15),
    "scale_min": (float, 0.85),
    "scale_max": (float, 1.15),
    "elastic_sigma": (float, 4.0),
    "elastic_alpha": (float, 6.0),
    "shaky_amplitude": (float, 2.5),
    "shaky_wavelength": (float, 6.0),
}

TRAIN_SCHEMA = {
    "data": (str, None),
    "out": (str, None),
    "algorithm": (str, "rvsm"),
    "penalty": (str, "l0"),
    "a": (float, 1.0),
    "lambda": (float, 0.0005),
    "beta": (float, 0.1),
    "eta": (float, 0.1),
    "epochs": (int, 20),
    "batch_size": (int, 32),
    "seed": (int, 0),
    "thresholded_layers": (_name_list, ("dense",)),
    "normalize_w": (_boolean, False),
    "histogram_bins": (int, 101),
}

EVAL_SCHEMA = {
    "checkpoint": (str, None),
    "data": (str, None),
}

REPORT_SCHEMA = {
    "run": (str, None),
}

SCHEMAS = {
    "generate": GENERATE_SCHEMA,
    "train": TRAIN_SCHEMA,
    "eval": EVAL_SCHEMA,
    "report": REPORT_SCHEMA,
}


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    settings = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                settings[key] = value
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return settings


def resolve_settings(command: str, config_path, flag_values: dict) -> dict:
    """defaults < config file < explicit flags, with unknown keys rejected."""
    schema = SCHEMAS[command]
    resolved = {key: default for key, (_, default) in schema.items()}
    if config_path:
        for key, text in parse_config_file(config_path).items():
            if key not in schema:
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
            converter = schema[key][0]
            try:
                resolved[key] = converter(text)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
    for key, value in flag_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _require(settings, key, command):
    if settings[key] is None:
        raise ConfigError(f"{command} requires a value for {key!r}")
    return settings[key]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(settings) -> int:
    out = _require(settings, "out", "generate")
    if not (settings["scale_min"] <= settings["scale_max"]):
        raise ConfigError("scale_min must not exceed scale_max")
    try:
        params = AugmentParams(
            rotation_max=np.deg2rad(settings["rotation_max_deg"]),
            shear_max=settings["shear_max"],
            scale_range=(settings["scale_min"], settings["scale_max"]),
            elastic_sigma=settings["elastic_sigma"],
            elastic_alpha=settings["elastic_alpha"],
            shaky_amplitude=settings["shaky_amplitude"],
            shaky_wavelength=settings["shaky_wavelength"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    train, test = generate_dataset(
        settings["n_train"], settings["n_test"], params, seed=settings["seed"],
        size=settings["size"],
    )
    save_dataset(train, os.path.join(out, "train"))
    save_dataset(test, os.path.join(out, "test"))
    print(f"wrote {len(train)} train and {len(test)} test samples under {out}")
    return EXIT_OK


def _build_run_config(settings) -> RvsmConfig:
    kind = settings["penalty"]
    try:
        penalty = PenaltySpec(kind, lam=settings["lambda"],
                              a=settings["a"] if kind == "tl1" else None)
        return RvsmConfig(
            penalty,
            eta=settings["eta"],
            beta=settings["beta"],
            thresholded_layers=settings["thresholded_layers"],
            normalize_w=settings["normalize_w"],
            epochs=settings["epochs"],
            batch_size=settings["batch_size"],
            seed=settings["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _report_lines(settings, config, metrics, weights_by_layer, initial_conv, final_conv,
                  equilibrium=None, w_minus_u=None):
    lines = []
    for key in ("algorithm", "penalty", "a", "lambda", "beta", "eta", "epochs",
                "batch_size", "seed", "thresholded_layers", "normalize_w"):
        lines.append((key, _fmt(settings[key])))
    final = metrics[-1]
    lines.append(("final_train_loss", _fmt(final.train_loss)))
    lines.append(("final_test_loss", _fmt(final.test_loss)))
    lines.append(("final_accuracy", _fmt(final.accuracy)))
    lines.append(("final_sparsity", _fmt(final.sparsity)))
    for name, tensor in weights_by_layer.items():
        report = sparsity_buckets(tensor, BUCKET_SCALES, layer=name)
        lines.append((f"sparsity_{name}", _fmt(report.zero_fraction)))
        for n in BUCKET_SCALES:
            lines.append((f"bucket_{name}_1e-{n}", _fmt(report.buckets[n])))
        lines.append((f"gap_indicator_{name}", _fmt(report.gap_indicator)))
    for name in ("conv1", "conv2", "conv3"):
        report = sign_changes(initial_conv[name], final_conv[name], layer=name)
        lines.append((f"sign_changes_{name}", f"{report.changed}/{report.total}"))
        lines.append((f"sign_changes_{name}_percent", _fmt(report.percent)))
    if equilibrium is not None:
        lines.append(("u_residual", _fmt(equilibrium.u_residual)))
        lines.append(("grad_residual", _fmt(equilibrium.grad_residual)))
    if w_minus_u is not None:
        lines.append(("w_minus_u_sup", _fmt(w_minus_u)))
    return lines


def cmd_train(settings) -> int:
    data_dir = _require(settings, "data", "train")
    out = _require(settings, "out", "train")
    if settings["algorithm"] not in ("rvsm", "sgd-penalty"):
        raise ConfigError(f"unknown algorithm {settings['algorithm']!r}")
    if settings["algorithm"] == "sgd-penalty" and settings["penalty"] == "l0":
        raise ConfigError("the l0 penalty has no usable gradient; sgd-penalty "
                          "supports l1 and tl1 only")
    config = _build_run_config(settings)
    train_ds = load_dataset(os.path.join(data_dir, "train"))
    test_ds = load_dataset(os.path.join(data_dir, "test"))
    X, y = as_training_arrays(train_ds)
    test_data = as_training_arrays(test_ds)
    size = train_ds.images.shape[1]
    net = build_default_network(num_classes=2, input_size=size, seed=settings["seed"])
    initial_conv = {name: net.weight_tensors()[name].copy()
                    for name in ("conv1", "conv2", "conv3")}

    os.makedirs(out, exist_ok=True)
    if settings["algorithm"] == "rvsm":
        net, state, metrics = rvsm_train(net, (X, y), config, test_data=test_data)
        equilibrium = equilibrium_residuals(config, net, state, (X, y))
        w_minus_u = max(
            float(np.max(np.abs(net.weight_tensors()[name] - state.u[name])))
            for name in config.thresholded_layers
        )
        with deployed_weights(net, state.u):
            deployed = {k: v.copy() for k, v in net.parameters().items()}
    else:
        net, metrics = penalized_sgd_train(net, (X, y), config, test_data=test_data)
        equilibrium = None
        w_minus_u = None
        deployed = {k: v.copy() for k, v in net.parameters().items()}

    save_checkpoint(os.path.join(out, "checkpoint.rvsm"), deployed)
    _write_csv(
        os.path.join(out, "epochs.csv"),
        ["epoch", "train_loss", "test_loss", "accuracy", "sparsity"],
        [(m.epoch, _fmt(m.train_loss), _fmt(m.test_loss), _fmt(m.accuracy), _fmt(m.sparsity))
         for m in metrics],
    )
    weights_by_layer = {}
    for name in config.thresholded_layers:
        tensor = deployed[f"{name}.weight"]
        weights_by_layer[name] = tensor
        centers, counts = weight_histogram(tensor, bins=settings["histogram_bins"])
        _write_csv(
            os.path.join(out, f"histogram_{name}.csv"),
            ["bin_center", "count"],
            [(_fmt(float(c)), int(k)) for c, k in zip(centers, counts)],
        )
    final_conv = {name: deployed[f"{name}.weight"] for name in ("conv1", "conv2", "conv3")}
    lines = _report_lines(settings, config, metrics, weights_by_layer,
                          initial_conv, final_conv, equilibrium, w_minus_u)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        for key, value in lines:
            fh.write(f"{key} = {value}\n")
    print(f"trained {settings['algorithm']} for {settings['epochs']} epochs; "
          f"final accuracy {metrics[-1].accuracy}, sparsity {metrics[-1].sparsity}")
    return EXIT_OK


def cmd_eval(settings) -> int:
    ckpt_path = _require(settings, "checkpoint", "eval")
    data_dir = _require(settings, "data", "eval")
    params = load_checkpoint(ckpt_path)
    net = network_from_params(params)
    ds = load_dataset(data_dir)
    X, y = as_training_arrays(ds)
    acc = accuracy(net, (X, y))
    print(f"samples = {len(y)}")
    print(f"accuracy = {_fmt(acc)}")
    for name, tensor in net.weight_tensors().items():
        print(f"sparsity_{name} = {_fmt(sparsity(tensor))}")
    return EXIT_OK


def cmd_report(settings) -> int:
    run_dir = _require(settings, "run", "report")
    epochs_path = os.path.join(run_dir, "epochs.csv")
    report_path = os.path.join(run_dir, "report.txt")
    if not (os.path.isfile(epochs_path) and os.path.isfile(report_path)):
        raise DatasetError(f"{run_dir} does not look like a finished run "
                           "(missing epochs.csv or report.txt)")
    with open(epochs_path, newline="") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(cell) for cell in column) for column in zip(*rows)]
    print("per-epoch metrics")
    for row in rows:
        print("  " + "  ".join(cell.rjust(width) for cell, width in zip(row, widths)))
    print()
    print("summary")
    with open(report_path) as fh:
        for line in fh:
            print("  " + line.rstrip("\n"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _add_schema_flags(parser, schema):
    for key, (converter, _default) in schema.items():
        flag = "--" + key.replace("_", "-")
        if converter is _boolean:
            parser.add_argument(flag, dest=key, type=_boolean, default=None,
                                metavar="BOOL")
        elif converter is _name_list:
            parser.add_argument(flag, dest=key, type=_name_list, default=None,
                                metavar="NAMES")
        else:
            parser.add_argument(flag, dest=key, type=converter, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rvsm", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "generate": "write a synthetic curve dataset (train/ and test/ splits)",
        "train": "train a network on a generated dataset and write run artifacts",
        "eval": "score a checkpoint on a dataset split",
        "report": "pretty-print the artifacts of a finished run",
    }
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command, help=descriptions[command])
        p.add_argument("--config", default=None, help="flat key = value settings file")
        _add_schema_flags(p, schema)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        flag_values = {key: getattr(args, key) for key in SCHEMAS[args.command]}
        settings = resolve_settings(args.command, args.config, flag_values)
        return COMMANDS[args.command](settings)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
