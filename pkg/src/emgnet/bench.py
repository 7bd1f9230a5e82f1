"""Batch-1 inference latency: the minimum over trials of the mean time per prediction.

Taking the minimum of trial means gives a soft lower bound that is
insensitive to interference from the OS and other processes.  Background
load still shifts results, so compare numbers only from the same quiet
host.  Timed regions are single-threaded and contain nothing but the
prediction calls.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import UsageError


@dataclass
class BenchConfig:
    trials: int = 20
    predictions_per_trial: int = 1000
    warmup_predictions: int = 100
    input_shape: tuple = (30, 8)
    seed: int = 0

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if self.trials < 1 or self.predictions_per_trial < 1:
            raise UsageError("trials and predictions_per_trial must be >= 1")
        if self.warmup_predictions < 0:
            raise UsageError("warmup_predictions must be >= 0")


@dataclass
class BenchReport:
    model_name: str
    parameter_count: int
    trial_means_ms: list
    min_mean_latency_ms: float
    clock_resolution_ms: float
    coarse_clock: bool
    host: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def host_descriptor() -> dict:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "system": platform.system(),
        "numpy": np.__version__,
    }


def benchmark(predict, config: BenchConfig = BenchConfig(), model_name="model", parameter_count=0) -> BenchReport:
    """Time ``predict`` on single windows of ``config.input_shape``.

    Inputs are generated before any timing starts.  Each trial calls
    ``predict`` ``predictions_per_trial`` times back to back and records the
    mean; the report keeps every trial mean and their minimum.
    """
    rng = np.random.default_rng(config.seed)
    n_inputs = min(config.predictions_per_trial, 64)
    inputs = [rng.standard_normal(config.input_shape) for _ in range(n_inputs)]

    for k in range(config.warmup_predictions):
        predict(inputs[k % n_inputs])

    clock = time.perf_counter
    means = []
    for _ in range(config.trials):
        t0 = clock()
        for k in range(config.predictions_per_trial):
            predict(inputs[k % n_inputs])
        elapsed = clock() - t0
        means.append(elapsed * 1000.0 / config.predictions_per_trial)

    resolution_ms = time.get_clock_info("perf_counter").resolution * 1000.0
    best = min(means)
    return BenchReport(
        model_name=model_name,
        parameter_count=int(parameter_count),
        trial_means_ms=means,
        min_mean_latency_ms=best,
        clock_resolution_ms=resolution_ms,
        coarse_clock=resolution_ms > 0.01 * best,
        host=host_descriptor(),
    )


def benchmark_network(network, config: BenchConfig = None) -> BenchReport:
    from .layers import parameter_count

    config = config or BenchConfig(input_shape=(network.spec.input_rows, network.spec.input_cols))
    network.set_mode("infer")
    return benchmark(network.predict_proba, config, network.spec.name, parameter_count(network))


def format_table(reports) -> str:
    """Plain-text table with one row per model."""
    rows = [("Model", "Params", "Min mean latency (ms)")]
    rows += [(r.model_name, f"{r.parameter_count:,}", f"{r.min_mean_latency_ms:.4f}") for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = []
    for n, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


class SpinStub:
    """Busy-waits a fixed time per call; a controllable stand-in model."""

    def __init__(self, seconds=1e-3):
        self.seconds = seconds

    def __call__(self, _window):
        end = time.perf_counter() + self.seconds
        while time.perf_counter() < end:
            pass
        return 0
