"""Compact temporal CNN and SVM+mDWT baselines for sEMG gesture recognition.

Everything is plain numpy in double precision.  The main entry points:

* :func:`build_compact_cnn`, :func:`build_generic_cnn` and :func:`train`
* :func:`svm_train` over :func:`mdwt_features`
* :func:`run_experiment` for repetition-based cross-validation
* :func:`benchmark` for batch-1 latency
"""

__version__ = "0.1.0"

from .bench import BenchConfig, BenchReport, SpinStub, benchmark, benchmark_network
from .dwt import WaveletSpec, dwt_decompose, mdwt_features
from .errors import DataError, EmgNetError, NumericError, ShapeError, SpecError, UsageError
from .experiment import ExperimentConfig, run_experiment
from .layers import (
    LayerSpec,
    Network,
    NetworkSpec,
    build_compact_cnn,
    build_generic_cnn,
    forward,
    parameter_count,
)
from .pipeline import (
    ConfusionMatrix,
    FoldPlan,
    Recording,
    confusion_matrix,
    extract_windows,
    macro_accuracy,
    make_fold_plans,
    pooled_macro_accuracy,
)
from .svm import SvmConfig, svm_predict, svm_train
from .synth import SynthConfig, generate_dataset
from .tensor import FilterBank, conv2d, tensor
from .training import TrainConfig, train

__all__ = [name for name in dir() if not name.startswith("_")]
