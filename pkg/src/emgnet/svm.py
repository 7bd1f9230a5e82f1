"""One-vs-all RBF support vector machine trained by SMO.

Each binary machine solves the soft-margin dual

    min_a  1/2 a'Qa - sum(a)   s.t.  0 <= a_i <= C_i,  y'a = 0,

with ``Q_ij = y_i y_j k(x_i, x_j)``, picking at every step the pair that
violates the KKT conditions most (first-order working-set selection) and
solving the two-variable subproblem analytically.  Per-sample bounds
``C_i`` carry the class weighting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, UsageError

log = logging.getLogger(__name__)

TAU = 1e-12
# The full training kernel is precomputed; 20k samples is about 3 GiB.
MAX_KERNEL_SAMPLES = 20000


@dataclass
class SvmConfig:
    c: float = 1.0
    gamma: object = "auto"  # "auto" -> 1 / n_features, or a positive float
    tolerance: float = 1e-3
    max_passes: int = 200
    class_weighting: str = "inverse_frequency"
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise UsageError("SVM penalty c must be positive")
        if self.gamma != "auto" and not float(self.gamma) > 0:
            raise UsageError("explicit gamma must be positive")
        if self.class_weighting not in ("inverse_frequency", "none"):
            raise UsageError(f"class_weighting must be inverse_frequency or none, got {self.class_weighting!r}")
        if self.tolerance <= 0 or self.max_passes < 1:
            raise UsageError("tolerance must be positive and max_passes >= 1")

    def resolve_gamma(self, n_features: int) -> float:
        return 1.0 / n_features if self.gamma == "auto" else float(self.gamma)


def rbf_kernel(x, y, gamma) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ShapeError(f"feature length mismatch: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise UsageError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(a, b, gamma) -> np.ndarray:
    """Kernel matrix between the rows of ``a`` and ``b``."""
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def class_weights(labels, num_classes) -> np.ndarray:
    """Weights proportional to 1/count, scaled so the mean over present classes is 1."""
    counts = np.bincount(labels, minlength=num_classes).astype(float)
    w = np.zeros(num_classes)
    present = counts > 0
    w[present] = 1.0 / counts[present]
    return w / w[present].mean()


@dataclass
class BinaryResult:
    alpha: np.ndarray
    bias: float
    iterations: int
    converged: bool
    gradient: np.ndarray
    objective: list = field(default_factory=list)


def _select_pair(alpha, grad, y, bounds):
    """Most-violating pair ``(i, j, gap)``; gap <= tol means KKT holds."""
    yg = -y * grad
    up = ((y > 0) & (alpha < bounds)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < bounds)) | ((y > 0) & (alpha > 0))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    yg_up = np.where(up, yg, -np.inf)
    yg_low = np.where(low, yg, np.inf)
    i = int(np.argmax(yg_up))
    j = int(np.argmin(yg_low))
    return i, j, float(yg_up[i] - yg_low[j])


def kkt_gap(alpha, grad, y, bounds) -> float:
    return _select_pair(alpha, grad, y, bounds)[2]


def smo_binary(kernel, y, bounds, tolerance=1e-3, max_iter=None, track_objective=False) -> BinaryResult:
    """Solve one binary dual on a precomputed kernel matrix."""
    n = len(y)
    y = np.asarray(y, dtype=float)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.diag(kernel)
    max_iter = max_iter or 100 * n
    objective = []
    it = 0
    converged = False
    while it < max_iter:
        i, j, gap = _select_pair(alpha, grad, y, bounds)
        if gap <= tolerance:
            converged = True
            break
        it += 1
        ki, kj = kernel[i], kernel[j]
        yi, yj = y[i], y[j]
        ci, cj = bounds[i], bounds[j]
        old_i, old_j = alpha[i], alpha[j]
        # curvature along the pair direction is the same for either label pairing
        quad = max(diag[i] + diag[j] - 2.0 * ki[j], TAU)
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > ci - cj:
                if ai > ci:
                    ai, aj = ci, ci - diff
            elif aj > cj:
                aj, ai = cj, cj + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > ci:
                if ai > ci:
                    ai, aj = ci, total - ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > cj:
                if aj > cj:
                    aj, ai = cj, total - cj
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        # Q[:, i] = y * y_i * K[:, i]
        grad += y * (yi * (ai - old_i) * ki + yj * (aj - old_j) * kj)
        if track_objective:
            objective.append(-0.5 * float(alpha @ (grad - 1.0)))
    if not converged:
        log.warning("SMO stopped after %d iterations without reaching tolerance %g", it, tolerance)
    return BinaryResult(alpha, _bias(alpha, grad, y, bounds), it, converged, grad, objective)


def _bias(alpha, grad, y, bounds) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < bounds)
    if free.any():
        rho = float(yg[free].mean())
    else:
        at_upper = alpha >= bounds
        at_lower = alpha <= 0
        ub_mask = ((y > 0) & at_upper) | ((y < 0) & at_lower)
        lb_mask = ((y > 0) & at_lower) | ((y < 0) & at_upper)
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb) if np.isfinite(ub + lb) else float(yg.mean())
    return -rho


@dataclass
class OvaModel:
    classes: np.ndarray
    support_vectors: np.ndarray  # standardised features, shared by all machines
    dual_coef: np.ndarray  # (n_sv, n_classes): alpha_i * y_i per machine
    intercepts: np.ndarray
    gamma: float
    mean: np.ndarray
    scale: np.ndarray
    bounds_scale: np.ndarray = None  # per-class C multipliers used in training
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def n_features(self):
        return len(self.mean)

    def _standardize(self, x):
        return (x - self.mean) / self.scale

    def decision_function(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != self.n_features:
            raise ShapeError(f"feature length {x.shape[1]} != trained length {self.n_features}")
        k = rbf_matrix(self._standardize(x), self.support_vectors, self.gamma)
        return k @ self.dual_coef + self.intercepts

    def predict(self, features) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        return self.classes[np.argmax(self.decision_function(features), axis=1)]


def svm_train(features, labels, config: SvmConfig = SvmConfig(), num_classes=None, track_objective=False) -> OvaModel:
    x = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if x.ndim != 2 or len(x) != len(labels):
        raise ShapeError(f"features must be (n, d) matching {len(labels)} labels, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite value in SVM features")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise UsageError("SVM training needs at least two classes")
    num_classes = num_classes or int(classes.max()) + 1

    if config.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    xs = (x - mean) / scale
    if len(xs) > MAX_KERNEL_SAMPLES:
        gib = len(xs) ** 2 * 8 / 2**30
        raise UsageError(
            f"{len(xs)} training samples need a {gib:.1f} GiB kernel matrix; "
            f"the limit is {MAX_KERNEL_SAMPLES} (raise increment_ms or shorten the recordings)"
        )
    gamma = config.resolve_gamma(x.shape[1])
    kernel = rbf_matrix(xs, xs, gamma)

    if config.class_weighting == "inverse_frequency":
        weights = class_weights(labels, num_classes)
    else:
        weights = np.ones(num_classes)
    bounds = config.c * weights[labels]

    results = []
    for c in classes:
        y = np.where(labels == c, 1.0, -1.0)
        results.append(
            smo_binary(kernel, y, bounds, config.tolerance, config.max_passes * len(y), track_objective)
        )
    alphas = np.stack([r.alpha for r in results], axis=1)
    sv = np.flatnonzero((alphas > 0).any(axis=1))
    signs = np.stack([np.where(labels == c, 1.0, -1.0) for c in classes], axis=1)
    model = OvaModel(
        classes=classes,
        support_vectors=xs[sv],
        dual_coef=(alphas * signs)[sv],
        intercepts=np.array([r.bias for r in results]),
        gamma=gamma,
        mean=mean,
        scale=scale,
        bounds_scale=weights,
    )
    model.diagnostics = {
        "iterations": [r.iterations for r in results],
        "converged": [r.converged for r in results],
        "kkt_gap": [kkt_gap(r.alpha, r.gradient, s, bounds) for r, s in zip(results, signs.T)],
        "objective": [r.objective for r in results],
        "alpha": alphas,
        "bounds": bounds,
    }
    return model


def svm_predict(model: OvaModel, feature) -> int:
    return int(model.predict(np.asarray(feature)[None])[0])
