"""Cross-validated experiments wiring dataset, windows, models and metrics.

An :class:`ExperimentConfig` is a single JSON document that captures every
seed, so a report carries everything needed to reproduce it.  Report JSON
contains no timings and is byte-identical across runs of the same config.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bench import BenchConfig
from .dwt import WaveletSpec, mdwt_features
from .errors import DataError, EmgNetError, UsageError
from .layers import build_compact_cnn, build_generic_cnn, parameter_count
from .pipeline import (
    confusion_matrix,
    extract_all,
    load_dataset,
    macro_accuracy,
    make_fold_plans,
    pooled_macro_accuracy,
    window_length,
)
from .svm import SvmConfig, svm_train
from .training import TrainConfig, predict_in_chunks, train

log = logging.getLogger(__name__)

MODELS = ("compact_cnn", "generic_cnn", "svm_mdwt")
REPORT_SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    device: str = "myo"
    model: str = "compact_cnn"
    dataset: str = "data"
    num_folds: int = 12
    seed: int = 0
    fold: int = 0
    window_ms: float = 150.0
    increment_ms: float = 5.0
    wavelet: str = None  # None -> db7 when windows are long enough, else haar
    wavelet_levels: int = 3
    train: TrainConfig = field(default_factory=TrainConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.device not in ("myo", "delsys"):
            raise UsageError(f"device must be myo or delsys, got {self.device!r}")
        if self.model not in MODELS:
            raise UsageError(f"model must be one of {MODELS}, got {self.model!r}")
        for name, cls in (("train", TrainConfig), ("svm", SvmConfig), ("bench", BenchConfig)):
            value = getattr(self, name)
            if isinstance(value, dict):
                setattr(self, name, _from_dict(cls, value))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return _from_dict(cls, doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        config = cls.from_dict(doc)
        if not Path(config.dataset).is_absolute():
            config.dataset = str((path.parent / config.dataset).resolve())
        return config

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override the master seed and every derived seed."""
        self.seed = seed
        self.train.seed = seed
        self.svm.seed = seed
        self.bench.seed = seed
        return self

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["bench"]["input_shape"] = list(self.bench.input_shape)
        return doc


def _from_dict(cls, doc):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown {cls.__name__} field(s): {sorted(unknown)}")
    return cls(**doc)


def wavelet_for(config: ExperimentConfig, n_samples: int) -> WaveletSpec:
    if config.wavelet:
        return WaveletSpec(config.wavelet, config.wavelet_levels)
    spec = WaveletSpec("db7", config.wavelet_levels)
    if n_samples >= spec.min_length:
        return spec
    return WaveletSpec("haar", config.wavelet_levels)


@dataclass
class WindowData:
    x: np.ndarray  # (n, n_s, n_c)
    labels: np.ndarray
    repetitions: np.ndarray
    num_classes: int
    class_names: list
    manifest: dict

    def mask(self, reps) -> np.ndarray:
        return np.isin(self.repetitions, sorted(reps))


def load_windows(config: ExperimentConfig, recordings=None, manifest=None) -> WindowData:
    if recordings is None:
        manifest, recordings = load_dataset(config.dataset)
    if manifest["device"] != config.device:
        raise DataError(f"config device {config.device!r} != dataset device {manifest['device']!r}")
    windows = extract_all(recordings, config.window_ms, config.increment_ms)
    if not windows:
        raise DataError("dataset yields no windows")
    return WindowData(
        x=np.stack([w.samples for w in windows]),
        labels=np.array([w.gesture for w in windows]),
        repetitions=np.array([w.repetition for w in windows]),
        num_classes=len(manifest["gesture_names"]),
        class_names=list(manifest["gesture_names"]),
        manifest=manifest,
    )


def build_network(config: ExperimentConfig, data: WindowData, seed: int):
    n_s = window_length(config.window_ms, data.manifest["sample_rate_hz"])
    if config.model == "compact_cnn":
        return build_compact_cnn(config.device, seed=seed, num_classes=data.num_classes, input_rows=n_s)
    return build_generic_cnn((n_s, data.x.shape[2]), data.num_classes, seed=seed)


def fit_fold(config: ExperimentConfig, data: WindowData, plan, log_stream=None):
    """Train the configured model on one fold; returns ``(model, predict, info)``."""
    tr, va = data.mask(plan.train_reps), data.mask(plan.val_reps)
    seed = config.seed * 1000 + plan.fold_id
    if config.model == "svm_mdwt":
        wspec = wavelet_for(config, data.x.shape[1])
        feats = mdwt_features(data.x[tr], wspec)
        svm_cfg = SvmConfig(**{**asdict(config.svm), "seed": seed})
        model = svm_train(feats, data.labels[tr], svm_cfg, num_classes=data.num_classes)
        info = {"wavelet": wspec.family, "support_vectors": int(len(model.support_vectors))}
        return model, (lambda x: model.predict(mdwt_features(x, wspec))), info
    network = build_network(config, data, seed)
    tcfg = TrainConfig(**{**asdict(config.train), "seed": seed})
    report = train(network, (data.x[tr], data.labels[tr]), (data.x[va], data.labels[va]), tcfg, log_stream)
    info = {
        "stopped_epoch": report.stopped_epoch,
        "stop_reason": report.stop_reason,
        "best_epoch": report.best_epoch,
        "best_val_macro_accuracy": report.best_val_macro_acc,
    }
    return network, (lambda x: predict_in_chunks(network, x[..., None])), info


def evaluate_fold(predict, data: WindowData, plan):
    te = data.mask(plan.test_reps)
    preds = predict(data.x[te])
    return confusion_matrix(data.labels[te], preds, data.num_classes, data.class_names)


def run_experiment(config: ExperimentConfig, output_dir=None, data: WindowData = None) -> dict:
    """Every fold: split by repetition, train, test; then pool confusion tallies."""
    data = data or load_windows(config)
    plans = make_fold_plans(config.num_folds, config.seed)
    out = Path(output_dir) if output_dir else None
    folds, cms = [], []
    param_count = None
    for plan in plans:
        try:
            stream = None
            if out is not None and config.model != "svm_mdwt":
                stream = open(out / f"train_log_fold{plan.fold_id:02d}.jsonl", "w")
            try:
                model, predict, info = fit_fold(config, data, plan, stream)
            finally:
                if stream is not None:
                    stream.close()
            cm = evaluate_fold(predict, data, plan)
        except EmgNetError as exc:
            exc.args = (f"fold {plan.fold_id}: {exc}",)
            raise
        if config.model != "svm_mdwt":
            param_count = parameter_count(model)
        cms.append(cm)
        folds.append(
            {
                **plan.to_dict(),
                "n_train": int(data.mask(plan.train_reps).sum()),
                "n_val": int(data.mask(plan.val_reps).sum()),
                "n_test": int(data.mask(plan.test_reps).sum()),
                "macro_accuracy": macro_accuracy(cm),
                "training": info,
                "confusion_matrix": cm.to_dict(),
            }
        )
        log.info("fold %d macro accuracy %.4f", plan.fold_id, folds[-1]["macro_accuracy"])
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": config.to_dict(),
        "dataset": {
            "subject_id": data.manifest["subject_id"],
            "device": data.manifest["device"],
            "sample_rate_hz": data.manifest["sample_rate_hz"],
            "channels": data.manifest["channels"],
            "num_windows": int(len(data.x)),
            "window_samples": int(data.x.shape[1]),
        },
        "model": {"kind": config.model, "parameter_count": param_count},
        "folds": folds,
        "mean_fold_macro_accuracy": float(np.mean([f["macro_accuracy"] for f in folds])),
        "pooled_macro_accuracy": pooled_macro_accuracy(cms),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
