"""Recordings, sliding windows, repetition folds and macro accuracy.

Windows never leave the recording they were cut from, and folds assign
whole repetitions to train/validation/test, so overlapping windows can
never straddle two sets.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError, UsageError

log = logging.getLogger(__name__)

REPETITIONS = (1, 2, 3, 4, 5, 6)
DEVICE_CHANNELS = {"myo": 8, "delsys": 5}
DEVICE_RATES = {"myo": 200.0, "delsys": 2000.0}
MANIFEST = "manifest.json"


@dataclass
class Recording:
    subject_id: str
    gesture: int
    repetition: int
    sample_rate_hz: float
    samples: np.ndarray  # (time, channels)

    @property
    def key(self):
        return (self.subject_id, self.gesture, self.repetition)


@dataclass
class Window:
    samples: np.ndarray  # (n_s, n_c), a view into the recording
    gesture: int
    repetition: int
    source_offset: int
    recording: tuple = ()

    @property
    def source_range(self):
        return self.source_offset, self.source_offset + len(self.samples)


@dataclass(frozen=True)
class FoldPlan:
    fold_id: int
    train_reps: frozenset
    val_reps: frozenset
    test_reps: frozenset

    def __post_init__(self):
        sets = (self.train_reps, self.val_reps, self.test_reps)
        if tuple(len(s) for s in sets) != (3, 1, 2) or set().union(*sets) != set(REPETITIONS):
            raise UsageError(f"fold {self.fold_id} is not a 3/1/2 partition of repetitions 1..6")

    def role(self, repetition) -> str:
        if repetition in self.train_reps:
            return "train"
        if repetition in self.val_reps:
            return "val"
        if repetition in self.test_reps:
            return "test"
        raise UsageError(f"repetition {repetition} not covered by fold {self.fold_id}")

    def to_dict(self):
        return {
            "fold_id": self.fold_id,
            "train_reps": sorted(self.train_reps),
            "val_reps": sorted(self.val_reps),
            "test_reps": sorted(self.test_reps),
        }


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        g = self.counts.shape[0]
        if self.counts.shape != (g, g):
            raise ShapeError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise UsageError("confusion counts must be non-negative")
        if not self.class_names:
            self.class_names = [str(i) for i in range(g)]

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def tp(self):
        return np.diag(self.counts)

    @property
    def fn(self):
        return self.counts.sum(axis=1) - self.tp

    @property
    def fp(self):
        return self.counts.sum(axis=0) - self.tp

    def to_dict(self):
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}


# --------------------------------------------------------------------------
# Windowing
# --------------------------------------------------------------------------


def window_length(window_ms, sample_rate_hz) -> int:
    return int(round(window_ms * sample_rate_hz / 1000.0))


def window_step(increment_ms, sample_rate_hz) -> int:
    return max(1, int(round(increment_ms * sample_rate_hz / 1000.0)))


def extract_windows(recording: Recording, window_ms=150.0, increment_ms=5.0) -> list:
    """Slide a fixed window over one recording; every window inherits its labels."""
    n_s = window_length(window_ms, recording.sample_rate_hz)
    step = window_step(increment_ms, recording.sample_rate_hz)
    total = len(recording.samples)
    if total < n_s:
        log.warning("recording %s has %d samples, shorter than a %d-sample window", recording.key, total, n_s)
        return []
    count = (total - n_s) // step + 1
    return [
        Window(recording.samples[o:o + n_s], recording.gesture, recording.repetition, o, recording.key)
        for o in range(0, count * step, step)
    ]


def extract_all(recordings, window_ms=150.0, increment_ms=5.0) -> list:
    return [w for rec in recordings for w in extract_windows(rec, window_ms, increment_ms)]


def stack_windows(windows):
    """``(x, labels)`` with ``x`` shaped ``(n, n_s, n_c)``."""
    if not windows:
        return np.empty((0, 0, 0)), np.empty(0, dtype=int)
    return np.stack([w.samples for w in windows]), np.array([w.gesture for w in windows], dtype=int)


# --------------------------------------------------------------------------
# Folds
# --------------------------------------------------------------------------


def all_partitions() -> list:
    """Every 3/1/2 split of the six repetitions, ordered by (test pair, val rep)."""
    out = []
    for test in itertools.combinations(REPETITIONS, 2):
        rest = [r for r in REPETITIONS if r not in test]
        for val in rest:
            train = [r for r in rest if r != val]
            out.append((frozenset(train), frozenset([val]), frozenset(test)))
    return out


def make_fold_plans(num_folds=12, seed=0) -> list:
    parts = all_partitions()
    if not 1 <= num_folds <= len(parts):
        raise UsageError(f"num_folds must be in 1..{len(parts)}, got {num_folds}")
    order = np.random.default_rng(seed).permutation(len(parts))[:num_folds]
    return [FoldPlan(i, *parts[k]) for i, k in enumerate(order)]


def split_windows(windows, plan: FoldPlan):
    """Assign each window to (train, val, test) by its repetition alone."""
    sets = {"train": [], "val": [], "test": []}
    for w in windows:
        sets[plan.role(w.repetition)].append(w)
    return sets["train"], sets["val"], sets["test"]


def overlapping_pairs(a, b) -> int:
    """Count window pairs, one from each list, sharing a source sample of one recording.

    Every pair drawn from the same recording is compared; windows of
    different recordings never share samples.
    """
    groups = {}
    for side, ws in enumerate((a, b)):
        for w in ws:
            groups.setdefault(w.recording, ([], []))[side].append(w.source_range)
    total = 0
    for ra, rb in groups.values():
        if not ra or not rb:
            continue
        la, ha = np.array(ra).T
        lb, hb = np.array(rb).T
        for i in range(0, len(la), 512):
            s = slice(i, i + 512)
            total += int(((la[s, None] < hb[None, :]) & (lb[None, :] < ha[s, None])).sum())
    return total


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def confusion_matrix(true, predicted, num_classes, class_names=None) -> ConfusionMatrix:
    true = np.asarray(true, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if true.shape != predicted.shape:
        raise ShapeError("true and predicted label arrays differ in length")
    if len(predicted) and (predicted.min() < 0 or predicted.max() >= num_classes):
        raise UsageError(f"prediction outside 0..{num_classes - 1} violates the classifier contract")
    if len(true) and (true.min() < 0 or true.max() >= num_classes):
        raise UsageError(f"true label outside 0..{num_classes - 1}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true, predicted), 1)
    return ConfusionMatrix(counts, list(class_names) if class_names else [])


def macro_accuracy(cm: ConfusionMatrix, present_only=False) -> float:
    """Mean over classes of TP / (TP + FN).

    Undefined when a class has no true examples; ``present_only`` averages
    over the classes that do instead of raising.
    """
    tp = cm.tp.astype(float)
    support = cm.counts.sum(axis=1)
    if (support == 0).any():
        if not present_only:
            missing = np.flatnonzero(support == 0).tolist()
            raise UsageError(f"classes {missing} have no true examples; macro accuracy is undefined")
        keep = support > 0
        return float(np.mean(tp[keep] / support[keep]))
    return float(np.mean(tp / support))


def pooled_macro_accuracy(fold_cms) -> float:
    """Macro accuracy from TP and FN totalled over folds before dividing."""
    fold_cms = list(fold_cms)
    if not fold_cms:
        raise UsageError("need at least one confusion matrix")
    names = fold_cms[0].class_names
    for cm in fold_cms[1:]:
        if cm.class_names != names:
            raise UsageError("confusion matrices disagree on the class set")
    tp = sum(cm.tp for cm in fold_cms)
    fn = sum(cm.fn for cm in fold_cms)
    support = tp + fn
    if (support == 0).any():
        raise UsageError("a class has no true examples in any fold")
    return float(np.mean(tp / support))


def evaluate(classifier, test, num_classes, class_names=None, batch=2048) -> ConfusionMatrix:
    """Tally predictions of ``classifier`` over ``test`` windows.

    ``classifier`` maps a ``(n, n_s, n_c)`` array to ``n`` class indices.
    """
    x, y = stack_windows(test)
    preds = [np.asarray(classifier(x[i:i + batch]), dtype=int) for i in range(0, len(x), batch)]
    preds = np.concatenate(preds) if preds else np.empty(0, dtype=int)
    if len(preds) != len(y):
        raise UsageError(f"classifier returned {len(preds)} predictions for {len(y)} windows")
    return confusion_matrix(y, preds, num_classes, class_names)


# --------------------------------------------------------------------------
# Dataset on disk
# --------------------------------------------------------------------------


def recording_filename(gesture, repetition) -> str:
    return f"g{gesture}_r{repetition}.csv"


def write_dataset(path, recordings, device, gesture_names, subject_id="synthetic") -> Path:
    """Write a manifest plus one CSV per (gesture, repetition)."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {path}: {exc}") from exc
    rates = {r.sample_rate_hz for r in recordings}
    chans = {r.samples.shape[1] for r in recordings}
    if len(rates) != 1 or len(chans) != 1:
        raise DataError("all recordings must share one sample rate and channel count")
    manifest = {
        "subject_id": subject_id,
        "device": device,
        "sample_rate_hz": rates.pop(),
        "channels": chans.pop(),
        "gesture_names": list(gesture_names),
        "repetitions": sorted({r.repetition for r in recordings}),
    }
    try:
        (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        for rec in recordings:
            np.savetxt(path / recording_filename(rec.gesture, rec.repetition), rec.samples, fmt="%.8g", delimiter=",")
    except OSError as exc:
        raise DataError(f"cannot write dataset to {path}: {exc}") from exc
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    file = path / MANIFEST if path.is_dir() else path
    try:
        manifest = json.loads(file.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"dataset manifest not found: {file}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {file} is not valid JSON: {exc}") from exc
    for key in ("subject_id", "device", "sample_rate_hz", "channels", "gesture_names"):
        if key not in manifest:
            raise DataError(f"manifest {file} lacks field {key!r}")
    device = manifest["device"]
    if device not in DEVICE_CHANNELS:
        raise DataError(f"manifest device must be one of {sorted(DEVICE_CHANNELS)}, got {device!r}")
    if manifest["channels"] != DEVICE_CHANNELS[device]:
        raise DataError(f"{device} data has {DEVICE_CHANNELS[device]} channels, manifest says {manifest['channels']}")
    return manifest


def load_dataset(path):
    """Returns ``(manifest, recordings)`` from a dataset directory."""
    path = Path(path)
    manifest = read_manifest(path)
    recordings = []
    reps = manifest.get("repetitions", list(REPETITIONS))
    for g in range(len(manifest["gesture_names"])):
        for r in reps:
            file = path / recording_filename(g, r)
            try:
                samples = np.loadtxt(file, delimiter=",", ndmin=2)
            except OSError as exc:
                raise DataError(f"missing recording file {file}") from exc
            except ValueError as exc:
                raise DataError(f"cannot parse {file}: {exc}") from exc
            if samples.shape[1] != manifest["channels"]:
                raise DataError(f"{file} has {samples.shape[1]} columns, expected {manifest['channels']}")
            recordings.append(Recording(manifest["subject_id"], g, r, float(manifest["sample_rate_hz"]), samples))
    return manifest, recordings
