"""Loss, initialisation, Adam, early stopping and the epoch loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 50
    early_stop_min_improvement: float = 0.005
    early_stop_patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise UsageError("beta1 and beta2 must lie in [0, 1)")
        if self.early_stop_patience < 1:
            raise UsageError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise UsageError("batch_size and max_epochs must be >= 1")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_macro_acc: list = field(default_factory=list)
    stopped_epoch: int = 0
    stop_reason: str = "max_epochs"
    best_epoch: int = 0

    @property
    def best_val_macro_acc(self) -> float:
        return self.val_macro_acc[self.best_epoch - 1]

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_macro_acc": self.val_macro_acc,
            "stopped_epoch": self.stopped_epoch,
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
        }


def cross_entropy(probabilities, true_class) -> float:
    """``-log p[true_class]`` with the probability floored at 1e-12."""
    p = np.asarray(probabilities, dtype=float)
    if not 0 <= true_class < p.shape[-1]:
        raise UsageError(f"true_class {true_class} outside 0..{p.shape[-1] - 1}")
    return float(-np.log(max(p[true_class], PROB_FLOOR)))


def batch_cross_entropy(probabilities, labels):
    """Mean loss over a batch and its gradient with respect to the logits."""
    p = np.asarray(probabilities)
    labels = np.asarray(labels)
    n = len(labels)
    picked = np.maximum(p[np.arange(n), labels], PROB_FLOOR)
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return float(-np.log(picked).mean()), dlogits / n


def glorot_uniform_init(fan_in, fan_out, rng, size=None):
    """Draw from U(-L, L) with ``L = sqrt(6 / (fan_in + fan_out))``.

    Biases are not drawn here; every builder zero-initialises them.
    """
    if fan_in < 1 or fan_out < 1:
        raise UsageError("fan_in and fan_out must be >= 1")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=size)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, applied in place.

    ``params``, ``grads``, ``state.m`` and ``state.v`` are parallel lists of
    arrays.  Returns ``(params, state)`` for convenience.
    """
    if len(state.m) != len(params) or len(state.v) != len(params):
        raise UsageError("Adam state does not match the parameter list")
    offset = 0
    for g in grads:
        bad = ~np.isfinite(g)
        if bad.any():
            idx = offset + int(np.flatnonzero(bad.ravel())[0])
            raise NumericError(f"non-finite gradient at parameter index {idx}")
        offset += g.size
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    return params, state


def early_stop_check(history, min_improvement=0.005, patience=5) -> str:
    """``"stop"`` once the last ``patience`` epochs all failed to beat the
    best earlier value by ``min_improvement`` (absolute), else ``"continue"``.
    """
    if not history:
        raise UsageError("early stopping needs a non-empty history")
    if len(history) <= patience:
        return "continue"
    best_before = max(history[:-patience])
    recent = max(history[-patience:])
    if recent >= best_before + min_improvement - 1e-12:
        return "continue"
    return "stop"


def evaluate_macro_accuracy(network, x, y, num_classes, chunk=1024) -> float:
    from .pipeline import confusion_matrix, macro_accuracy

    preds = predict_in_chunks(network, x, chunk)
    return macro_accuracy(confusion_matrix(y, preds, num_classes), present_only=True)


def predict_in_chunks(network, x, chunk=1024):
    mode = network.mode
    network.set_mode("infer")
    try:
        return np.concatenate([network.predict(x[i:i + chunk]) for i in range(0, len(x), chunk)])
    finally:
        network.set_mode(mode)


def train(network, train_set, val_set, config: TrainConfig = None, log_stream=None) -> TrainReport:
    """Mini-batch Adam on mean cross-entropy with validation early stopping.

    ``train_set`` and ``val_set`` are ``(windows, labels)`` pairs; windows are
    shaped ``(n, rows, cols)`` or ``(n, rows, cols, 1)``.  On return the
    network holds the parameters of the best validation epoch and is in
    infer mode.  ``log_stream`` receives one JSON line per epoch.
    """
    config = config or TrainConfig()
    xt, yt = _as_arrays(*train_set)
    xv, yv = _as_arrays(*val_set)
    if len(xt) == 0 or len(xv) == 0:
        raise UsageError("train and validation sets must be non-empty")
    num_classes = network.spec.num_classes

    rng = np.random.default_rng(config.seed)
    network.rng = np.random.default_rng([config.seed, 1])
    params, grads = network.params(), network.grads()
    state = AdamState.zeros_like(params)
    report = TrainReport()
    best_acc, best_state = -1.0, None
    start = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        network.set_mode("train")
        order = rng.permutation(len(xt))
        total, seen = 0.0, 0
        for idx in _batches(order, config.batch_size):
            probs = network.predict_proba(xt[idx])
            loss, dlogits = batch_cross_entropy(probs, yt[idx])
            network.backward(dlogits)
            adam_step(params, grads, state, config)
            total += loss * len(idx)
            seen += len(idx)
        network.set_mode("infer")
        acc = evaluate_macro_accuracy(network, xv, yv, num_classes)
        report.train_loss.append(total / seen)
        report.val_macro_acc.append(acc)
        if acc > best_acc:
            best_acc, report.best_epoch = acc, epoch
            best_state = [a.copy() for a in network.state_arrays()]
        if log_stream is not None:
            record = {
                "epoch": epoch,
                "train_loss": report.train_loss[-1],
                "val_macro_acc": acc,
                "elapsed_ms": round((time.perf_counter() - start) * 1000.0, 3),
            }
            log_stream.write(json.dumps(record) + "\n")
        log.debug("epoch %d loss %.4f val %.4f", epoch, report.train_loss[-1], acc)
        report.stopped_epoch = epoch
        if early_stop_check(report.val_macro_acc, config.early_stop_min_improvement, config.early_stop_patience) == "stop":
            report.stop_reason = "early_stop"
            break

    for dst, src in zip(network.state_arrays(), best_state):
        dst[...] = src
    network.set_mode("infer")
    return report


def _batches(order, size):
    """Consecutive slices of ``order``; a trailing singleton joins the previous
    batch so batch normalisation never sees a batch of one."""
    starts = list(range(0, len(order), size))
    if len(starts) > 1 and len(order) - starts[-1] == 1:
        starts.pop()
    ends = starts[1:] + [len(order)]
    return [order[a:b] for a, b in zip(starts, ends)]


def _as_arrays(x, y):
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        x = x[..., None]
    return x, np.asarray(y, dtype=int)
