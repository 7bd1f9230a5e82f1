"""``emgnet`` command-line entry point.

Every subcommand reads one JSON experiment config (``--config``); ``--seed``
overrides the master seed and ``--output`` names where results go.  Exit
codes: 0 success, 1 usage error, 2 data error, 3 numeric error.  Results go
to files or stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, SpinStub, benchmark, benchmark_network, format_table
from .dwt import feature_names, mdwt_features
from .errors import DataError, EmgNetError, UsageError
from .experiment import (
    ExperimentConfig,
    evaluate_fold,
    fit_fold,
    load_windows,
    report_to_json,
    run_experiment,
    wavelet_for,
)
from .layers import build_compact_cnn, build_generic_cnn, parameter_count
from .pipeline import DEVICE_CHANNELS, macro_accuracy, make_fold_plans, window_length, write_dataset
from .serialize import load_model, save_model
from .svm import OvaModel
from .synth import SynthConfig, generate_dataset, gesture_names
from .training import predict_in_chunks

log = logging.getLogger("emgnet")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; 2 is reserved for data errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.with_seed(args.seed)
    return config


def _output_dir(args, default=None) -> Path:
    out = Path(args.output or default or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_text(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _fold_plan(config):
    plans = make_fold_plans(config.num_folds, config.seed)
    if not 0 <= config.fold < len(plans):
        raise UsageError(f"fold must be in [0, {len(plans)}), got {config.fold}")
    return plans[config.fold]


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = _load_config(args)
    synth = dict(config.synth)
    if args.seed is not None:
        synth["seed"] = args.seed
    subject_id = synth.pop("subject_id", "synthetic")
    sc = SynthConfig.for_device(config.device, window_ms=config.window_ms, **synth)
    out = Path(args.output or config.dataset)
    recordings = generate_dataset(sc)
    write_dataset(out, recordings, config.device, gesture_names(sc.num_gestures), subject_id)
    log.info("wrote %d recordings to %s", len(recordings), out)
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    out = _output_dir(args)
    data = load_windows(config)
    plan = _fold_plan(config)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as stream:
        model, _, info = fit_fold(config, data, plan, stream)
    save_model(model, out / "model.bin")
    _write_text(out / "train_info.json", json.dumps({"fold": plan.to_dict(), "training": info}, indent=2, sort_keys=True) + "\n")
    log.info("model written to %s", out / "model.bin")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    if not args.model:
        raise UsageError("eval needs --model <path>")
    model = load_model(args.model)
    data = load_windows(config)
    plan = _fold_plan(config)
    if isinstance(model, OvaModel):
        wspec = wavelet_for(config, data.x.shape[1])

        def predict(x):
            return model.predict(mdwt_features(x, wspec))
    else:
        model.set_mode("infer")

        def predict(x):
            return predict_in_chunks(model, x[..., None])

    cm = evaluate_fold(predict, data, plan)
    doc = {"fold": plan.to_dict(), "macro_accuracy": macro_accuracy(cm), "confusion_matrix": cm.to_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        _write_text(_output_dir(args) / "eval.json", text)
    sys.stdout.write(text)
    return 0


def cmd_run_experiment(args) -> int:
    config = _load_config(args)
    out = _output_dir(args)
    report = run_experiment(config, out)
    _write_text(out / "report.json", report_to_json(report))
    print(f"pooled macro accuracy {report['pooled_macro_accuracy']:.4f} over {len(report['folds'])} folds")
    return 0


def cmd_features(args) -> int:
    config = _load_config(args)
    data = load_windows(config)
    wspec = wavelet_for(config, data.x.shape[1])
    feats = mdwt_features(data.x, wspec)
    header = feature_names(data.x.shape[2], wspec) + ["gesture", "repetition"]
    if args.output:
        path = Path(args.output)
        if path.suffix != ".csv":
            path = _output_dir(args) / "features.csv"
        try:
            fh = open(path, "w", newline="")
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from exc
    else:
        fh = sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row, g, r in zip(feats, data.labels, data.repetitions):
            writer.writerow([repr(float(v)) for v in row] + [int(g), int(r)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _bench_networks(config, names):
    rows = window_length(config.window_ms, 200.0 if config.device == "myo" else 2000.0)
    cols = DEVICE_CHANNELS[config.device]
    for name in names:
        if name == "compact_cnn":
            yield build_compact_cnn(config.device, seed=config.seed, input_rows=rows)
        elif name == "generic_cnn":
            yield build_generic_cnn((rows, cols), seed=config.seed)
        else:
            raise UsageError(f"cannot benchmark {name!r}; choose compact_cnn or generic_cnn")


def cmd_bench(args) -> int:
    config = _load_config(args)
    bc = config.bench
    reports = []
    if args.stub_ms is not None:
        stub_cfg = BenchConfig(bc.trials, bc.predictions_per_trial, bc.warmup_predictions, bc.input_shape, bc.seed)
        reports.append(benchmark(SpinStub(args.stub_ms / 1000.0), stub_cfg, "stub", 0))
    if args.model:
        network = load_model(args.model)
        if isinstance(network, OvaModel):
            raise UsageError("bench times CNN models only")
        shape = (network.spec.input_rows, network.spec.input_cols)
        reports.append(benchmark_network(network, BenchConfig(bc.trials, bc.predictions_per_trial, bc.warmup_predictions, shape, bc.seed)))
    names = [n for n in (args.models or "").split(",") if n]
    if not names and not reports:
        names = [config.model] if config.model != "svm_mdwt" else ["compact_cnn"]
    for network in _bench_networks(config, names):
        shape = (network.spec.input_rows, network.spec.input_cols)
        cfg = BenchConfig(bc.trials, bc.predictions_per_trial, bc.warmup_predictions, shape, bc.seed)
        reports.append(benchmark_network(network, cfg))
    text = json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    if args.output:
        _write_text(_output_dir(args) / "bench.json", text)
    print(format_table(reports))
    return 0


COMMANDS = {
    "synth": (cmd_synth, "write a seeded synthetic dataset"),
    "train": (cmd_train, "train the configured model on one fold and save it"),
    "eval": (cmd_eval, "evaluate a saved model on one fold's test repetitions"),
    "run-experiment": (cmd_run_experiment, "cross-validate the configured model over all folds"),
    "features": (cmd_features, "export mDWT features of every window as CSV"),
    "bench": (cmd_bench, "measure batch-1 inference latency"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emgnet", description="Compact CNN and SVM baselines for sEMG gesture recognition.")
    parser.add_argument("--version", action="version", version=f"emgnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="experiment config JSON (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--output", help="output directory (features: a .csv path is also accepted)")
        if name in ("eval", "bench"):
            p.add_argument("--model", help="serialized model file")
        if name == "bench":
            p.add_argument("--models", help="comma-separated builders to time fresh: compact_cnn,generic_cnn")
            p.add_argument("--stub-ms", type=float, help="also time a busy-wait stub of this many milliseconds")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"emgnet: error: {exc}", file=sys.stderr)
        return UsageError.exit_code
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except EmgNetError as exc:
        print(f"emgnet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"emgnet {args.command}: numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
