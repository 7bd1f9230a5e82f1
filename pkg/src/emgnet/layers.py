"""Layer zoo, network container and the two architecture builders.

Activations flow through the network as batches shaped
``(n, time, channels, maps)``.  Every layer caches what its backward pass
needs during the most recent forward call, so a network instance is meant
to be driven by one trainer at a time.  In ``infer`` mode nothing is cached
and forward passes are pure.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import NumericError, ShapeError, SpecError, UsageError
from .tensor import FilterBank, conv2d, conv2d_backward, conv_output_shape, dense, dense_backward
from .training import glorot_uniform_init

KINDS = (
    "temporal_conv",
    "fire",
    "spatial_reduction",
    "dropout",
    "batchnorm",
    "dense_softmax",
    "conv",
    "leaky_relu",
)
MODES = ("train", "infer")
DEFAULT_ALPHA = 0.1
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


def leaky_relu(x, alpha=DEFAULT_ALPHA):
    """Identity for x >= 0, ``alpha * x`` below zero. Works on scalars and arrays."""
    if not 0.0 < alpha < 1.0:
        raise UsageError(f"alpha must lie in (0, 1), got {alpha}")
    if np.isscalar(x):
        return float(x) if x >= 0 else alpha * x
    x = np.asarray(x)
    # max(x, alpha*x) equals the piecewise form because 0 < alpha < 1
    return np.maximum(x, alpha * x)


def _leaky_relu_grad(x, upstream, alpha):
    return upstream * np.where(x >= 0, 1.0, alpha)


def softmax(logits):
    """Normalised exponentials along the last axis, computed after max-subtraction."""
    z = np.asarray(logits, dtype=float)
    if z.size == 0:
        raise UsageError("softmax of an empty array")
    if np.isnan(z).any():
        raise NumericError("NaN in softmax input")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# Declarative description
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filter_rows: int = 1
    filter_cols: int = 1
    out_depth: int = 0
    squeeze_depth: int = 0
    expand_temporal_rows: int = 0
    rate: float = 0.0
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if not 0.0 <= self.rate < 1.0:
            raise SpecError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if not 0.0 < self.alpha < 1.0:
            raise SpecError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kind == "fire":
            if self.squeeze_depth < 1 or self.squeeze_depth > self.out_depth:
                raise SpecError(
                    f"fire: need 1 <= squeeze_depth <= out_depth, got {self.squeeze_depth}/{self.out_depth}"
                )
            if self.out_depth % 2:
                raise SpecError(f"fire: out_depth must be even so both expand halves match, got {self.out_depth}")
            if self.expand_temporal_rows < 1:
                raise SpecError("fire: expand_temporal_rows must be >= 1")


@dataclass(frozen=True)
class NetworkSpec:
    input_rows: int
    input_cols: int
    layers: tuple
    num_classes: int
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_rows < 1 or self.input_cols < 1:
            raise SpecError("input dimensions must be >= 1")
        if not self.layers or self.layers[-1].kind != "dense_softmax":
            raise SpecError("last layer must be dense_softmax")
        if self.layers[-1].out_depth != self.num_classes:
            raise SpecError(
                f"dense_softmax out_depth {self.layers[-1].out_depth} != num_classes {self.num_classes}"
            )
        if any(layer.kind == "dense_softmax" for layer in self.layers[:-1]):
            raise SpecError("dense_softmax may only appear as the final layer")

    def to_text(self) -> str:
        """Canonical JSON text; equal specs give identical strings."""
        doc = {
            "name": self.name,
            "input_rows": self.input_rows,
            "input_cols": self.input_cols,
            "num_classes": self.num_classes,
            "layers": [asdict(layer) for layer in self.layers],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        doc = json.loads(text)
        return cls(
            input_rows=doc["input_rows"],
            input_cols=doc["input_cols"],
            num_classes=doc["num_classes"],
            name=doc.get("name", "network"),
            layers=tuple(LayerSpec(**layer) for layer in doc["layers"]),
        )


# --------------------------------------------------------------------------
# Runtime layers
# --------------------------------------------------------------------------


def _glorot_bank(rng, rows, cols, in_depth, out_depth):
    fan_in = rows * cols * in_depth
    fan_out = rows * cols * out_depth
    w = glorot_uniform_init(fan_in, fan_out, rng, size=(rows, cols, in_depth, out_depth))
    return FilterBank(w, np.zeros(out_depth))


class Layer:
    """Base class; parameter-free layers only override forward/backward."""

    spec: LayerSpec

    def params(self) -> list:
        return []

    def grads(self) -> list:
        return []

    def buffers(self) -> list:
        return []

    def forward(self, x, train: bool, rng=None):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


class ConvLayer(Layer):
    """Convolution, optionally followed by LReLU (``activate``)."""

    def __init__(self, spec, in_shape, rng, padding="same", activate=True):
        self.spec = spec
        self.padding = padding
        self.activate = activate
        rows, cols, depth = in_shape
        self.bank = _glorot_bank(rng, spec.filter_rows, spec.filter_cols, depth, spec.out_depth)
        self.out_shape = conv_output_shape(rows, cols, self.bank, padding)
        self._grad = FilterBank.zeros(*self.bank.weights.shape)

    def params(self):
        return [self.bank.weights, self.bank.biases]

    def grads(self):
        return [self._grad.weights, self._grad.biases]

    def forward(self, x, train, rng=None):
        z = conv2d(x, self.bank, self.padding)
        if train:
            self._x, self._z = x, z
        return leaky_relu(z, self.spec.alpha) if self.activate else z

    def backward(self, g):
        if self.activate:
            g = _leaky_relu_grad(self._z, g, self.spec.alpha)
        dx, grad = conv2d_backward(self._x, self.bank, g, self.padding)
        self._grad.weights[...] = grad.weights
        self._grad.biases[...] = grad.biases
        return dx


class FireLayer(Layer):
    """Squeeze 1x1 conv, then two expand convs (1x1 and kx1) concatenated on depth.

    No filter in the module spans more than one channel column.
    """

    def __init__(self, spec, in_shape, rng):
        self.spec = spec
        rows, cols, depth = in_shape
        half = spec.out_depth // 2
        self.squeeze = _glorot_bank(rng, 1, 1, depth, spec.squeeze_depth)
        self.expand_1x1 = _glorot_bank(rng, 1, 1, spec.squeeze_depth, half)
        self.expand_temporal = _glorot_bank(rng, spec.expand_temporal_rows, 1, spec.squeeze_depth, half)
        self.out_shape = (rows, cols, spec.out_depth)
        self._grads = [FilterBank.zeros(*b.weights.shape) for b in self.banks()]

    def banks(self):
        return [self.squeeze, self.expand_1x1, self.expand_temporal]

    def params(self):
        return [a for b in self.banks() for a in (b.weights, b.biases)]

    def grads(self):
        return [a for b in self._grads for a in (b.weights, b.biases)]

    def forward(self, x, train, rng=None):
        alpha = self.spec.alpha
        zs = conv2d(x, self.squeeze)
        s = leaky_relu(zs, alpha)
        ze = np.concatenate([conv2d(s, self.expand_1x1), conv2d(s, self.expand_temporal)], axis=-1)
        if train:
            self._cache = (x, zs, s, ze)
        return leaky_relu(ze, alpha)

    def backward(self, g):
        alpha = self.spec.alpha
        x, zs, s, ze = self._cache
        g = _leaky_relu_grad(ze, g, alpha)
        half = self.spec.out_depth // 2
        ds1, g1 = conv2d_backward(s, self.expand_1x1, g[..., :half])
        ds2, g2 = conv2d_backward(s, self.expand_temporal, g[..., half:])
        ds = _leaky_relu_grad(zs, ds1 + ds2, alpha)
        dx, g0 = conv2d_backward(x, self.squeeze, ds)
        for dst, src in zip(self._grads, (g0, g1, g2)):
            dst.weights[...] = src.weights
            dst.biases[...] = src.biases
        return dx


class DropoutLayer(Layer):
    def __init__(self, spec, in_shape):
        self.spec = spec
        self.out_shape = in_shape

    def forward(self, x, train, rng=None):
        if not train or self.spec.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.spec.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, g):
        return g if self._mask is None else g * self._mask


@dataclass
class BatchNormParams:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    @classmethod
    def identity(cls, maps):
        return cls(np.ones(maps), np.zeros(maps), np.zeros(maps), np.ones(maps))


def batchnorm_forward(batch, params: BatchNormParams, mode="train"):
    """Per-map normalisation over every axis but the last.

    Train mode uses batch statistics and folds them into the running
    estimates (``running = momentum * running + (1 - momentum) * batch``);
    infer mode uses the running estimates only.
    """
    batch = np.asarray(batch, dtype=float)
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "train":
        if batch.shape[0] < 2:
            raise UsageError("batchnorm needs a batch of at least 2 in train mode")
        axes = tuple(range(batch.ndim - 1))
        mean = batch.mean(axis=axes)
        var = batch.var(axis=axes)
        m = params.momentum
        params.running_mean[...] = m * params.running_mean + (1 - m) * mean
        params.running_var[...] = m * params.running_var + (1 - m) * var
    else:
        mean, var = params.running_mean, params.running_var
    xhat = (batch - mean) / np.sqrt(var + params.epsilon)
    return params.scale * xhat + params.shift


class BatchNormLayer(Layer):
    def __init__(self, spec, in_shape):
        self.spec = spec
        self.out_shape = in_shape
        self.bn = BatchNormParams.identity(in_shape[2])
        self._gscale = np.zeros_like(self.bn.scale)
        self._gshift = np.zeros_like(self.bn.shift)

    def params(self):
        return [self.bn.scale, self.bn.shift]

    def grads(self):
        return [self._gscale, self._gshift]

    def buffers(self):
        return [self.bn.running_mean, self.bn.running_var]

    def forward(self, x, train, rng=None):
        if not train:
            return batchnorm_forward(x, self.bn, "infer")
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.bn.epsilon)
        self._cache = ((x - mean) * inv_std, inv_std)
        return batchnorm_forward(x, self.bn, "train")

    def backward(self, g):
        xhat, inv_std = self._cache
        axes = tuple(range(g.ndim - 1))
        count = g.size // g.shape[-1]
        self._gscale[...] = (g * xhat).sum(axis=axes)
        self._gshift[...] = g.sum(axis=axes)
        gx = g * self.bn.scale
        return inv_std / count * (
            count * gx - gx.sum(axis=axes) - xhat * (gx * xhat).sum(axis=axes)
        )


class LeakyReluLayer(Layer):
    def __init__(self, spec, in_shape):
        self.spec = spec
        self.out_shape = in_shape

    def forward(self, x, train, rng=None):
        if train:
            self._x = x
        return leaky_relu(x, self.spec.alpha)

    def backward(self, g):
        return _leaky_relu_grad(self._x, g, self.spec.alpha)


class DenseSoftmaxLayer(Layer):
    """Flatten + affine map to class logits; softmax is applied by the network."""

    def __init__(self, spec, in_shape, rng):
        self.spec = spec
        n_in = int(np.prod(in_shape))
        self.weights = glorot_uniform_init(n_in, spec.out_depth, rng, size=(n_in, spec.out_depth))
        self.biases = np.zeros(spec.out_depth)
        self._gw = np.zeros_like(self.weights)
        self._gb = np.zeros_like(self.biases)
        self.out_shape = (spec.out_depth,)

    def params(self):
        return [self.weights, self.biases]

    def grads(self):
        return [self._gw, self._gb]

    def forward(self, x, train, rng=None):
        if train:
            self._x = x
        return dense(x, self.weights, self.biases)

    def backward(self, g):
        dx, gw, gb = dense_backward(self._x, self.weights, g)
        self._gw[...] = gw
        self._gb[...] = gb
        return dx


def _make_layer(spec: LayerSpec, in_shape, rng):
    rows, cols, depth = in_shape
    if spec.kind == "temporal_conv":
        if spec.filter_cols != 1:
            raise SpecError(f"temporal_conv filters span one channel, got filter_cols={spec.filter_cols}")
        return ConvLayer(spec, in_shape, rng)
    if spec.kind == "conv":
        return ConvLayer(spec, in_shape, rng, activate=False)
    if spec.kind == "fire":
        return FireLayer(spec, in_shape, rng)
    if spec.kind == "spatial_reduction":
        if spec.filter_cols != cols:
            raise SpecError(f"spatial_reduction: filter_cols {spec.filter_cols} != input cols {cols}")
        if spec.out_depth != 2:
            raise SpecError(f"spatial_reduction emits exactly 2 maps, got {spec.out_depth}")
        return ConvLayer(spec, in_shape, rng, padding="valid")
    if spec.kind == "dropout":
        return DropoutLayer(spec, in_shape)
    if spec.kind == "batchnorm":
        return BatchNormLayer(spec, in_shape)
    if spec.kind == "leaky_relu":
        return LeakyReluLayer(spec, in_shape)
    return DenseSoftmaxLayer(spec, in_shape, rng)


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------


@dataclass
class Network:
    spec: NetworkSpec
    layers: list
    mode: str = "infer"
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)

    @classmethod
    def build(cls, spec: NetworkSpec, seed: int = 0) -> "Network":
        rng = np.random.default_rng(seed)
        shape = (spec.input_rows, spec.input_cols, 1)
        layers = []
        for layer_spec in spec.layers:
            layer = _make_layer(layer_spec, shape, rng)
            layers.append(layer)
            shape = layer.out_shape
        return cls(spec=spec, layers=layers, rng=np.random.default_rng(seed + 1))

    @property
    def input_shape(self):
        return (self.spec.input_rows, self.spec.input_cols, 1)

    def set_mode(self, mode: str) -> "Network":
        if mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        return self

    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list:
        return [g for layer in self.layers for g in layer.grads()]

    def state_arrays(self) -> list:
        """Parameters and running statistics, layer by layer."""
        return [a for layer in self.layers for a in (*layer.params(), *layer.buffers())]

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[..., None]
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            got = x.shape[1:] if x.ndim == 4 else x.shape
            raise ShapeError(f"window shape {got} does not match network input {self.input_shape[:2]}")
        return x, single

    def logits(self, x):
        xb, single = self._as_batch(x)
        train = self.mode == "train"
        for layer in self.layers:
            xb = layer.forward(xb, train, self.rng)
        return xb[0] if single else xb

    def predict_proba(self, x):
        return softmax(self.logits(x))

    def predict(self, x):
        return np.argmax(self.logits(x), axis=-1)

    def backward(self, dlogits):
        """Backpropagate a logit gradient from the last train-mode forward pass."""
        g = np.atleast_2d(dlogits)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameter_count(self) -> int:
        return parameter_count(self)


def forward(network: Network, window) -> np.ndarray:
    """Class probabilities for a ``(rows, cols)`` or ``(rows, cols, 1)`` window."""
    return network.predict_proba(window)


def parameter_count(network) -> int:
    """Trainable scalars: weights, biases, batchnorm scale and shift.

    Accepts a built :class:`Network` or a :class:`NetworkSpec`; for a spec the
    count is worked out in closed form without instantiating anything.
    """
    if isinstance(network, Network):
        return int(sum(p.size for p in network.params()))
    return spec_parameter_count(network)


def layer_parameter_counts(spec: NetworkSpec) -> list:
    """Closed-form ``(kind, count, output_shape)`` per layer."""
    rows, cols, depth = spec.input_rows, spec.input_cols, 1
    out = []
    for layer in spec.layers:
        k = layer.kind
        if k in ("temporal_conv", "conv"):
            n = layer.filter_rows * layer.filter_cols * depth * layer.out_depth + layer.out_depth
            depth = layer.out_depth
        elif k == "fire":
            s, half = layer.squeeze_depth, layer.out_depth // 2
            n = (depth * s + s) + (s * half + half) + (layer.expand_temporal_rows * s * half + half)
            depth = layer.out_depth
        elif k == "spatial_reduction":
            n = layer.filter_rows * layer.filter_cols * depth * layer.out_depth + layer.out_depth
            rows, cols, depth = rows - layer.filter_rows + 1, cols - layer.filter_cols + 1, layer.out_depth
        elif k == "batchnorm":
            n = 2 * depth
        elif k == "dense_softmax":
            n = rows * cols * depth * layer.out_depth + layer.out_depth
            rows, cols, depth = 1, 1, layer.out_depth
        else:
            n = 0
        out.append((k, n, (rows, cols, depth)))
    return out


def spec_parameter_count(spec: NetworkSpec) -> int:
    return sum(n for _, n, _ in layer_parameter_counts(spec))


# --------------------------------------------------------------------------
# Architectures
# --------------------------------------------------------------------------

# (input rows, input cols, temporal filter rows) per device at the default
# 150 ms window: 200 Hz Myo armband, 2 kHz Delsys electrodes.
DEVICES = {
    "myo": (30, 8, 3),
    "delsys": (300, 5, 50),
}

COMPACT_TEMPORAL_FILTERS = 8
COMPACT_FIRES = ((8, 52), (16, 64))  # (squeeze_depth, out_depth) per module
COMPACT_EXPAND_ROWS = 3
COMPACT_DROPOUT = 0.5


def compact_cnn_spec(
    input_rows,
    input_cols,
    num_classes=15,
    temporal_rows=3,
    temporal_filters=COMPACT_TEMPORAL_FILTERS,
    fires=COMPACT_FIRES,
    expand_rows=COMPACT_EXPAND_ROWS,
    dropout=COMPACT_DROPOUT,
    alpha=DEFAULT_ALPHA,
    name="compact_cnn",
) -> NetworkSpec:
    layers = [LayerSpec("temporal_conv", filter_rows=temporal_rows, out_depth=temporal_filters, alpha=alpha)]
    for squeeze, out in fires:
        layers.append(
            LayerSpec("fire", out_depth=out, squeeze_depth=squeeze, expand_temporal_rows=expand_rows, alpha=alpha)
        )
    layers.append(LayerSpec("spatial_reduction", filter_rows=1, filter_cols=input_cols, out_depth=2, alpha=alpha))
    if dropout:
        layers.append(LayerSpec("dropout", rate=dropout))
    layers.append(LayerSpec("dense_softmax", out_depth=num_classes))
    return NetworkSpec(input_rows, input_cols, tuple(layers), num_classes, name=name)


def build_compact_cnn(config="myo", seed=0, num_classes=15, input_rows=None) -> Network:
    """Compact CNN for a device: temporal conv, two temporal fire modules,
    2-map spatial reduction over all channels, dropout, dense softmax.

    ``input_rows`` overrides the default window length (e.g. a different
    sample rate); the temporal filter length stays device-specific.
    """
    if config not in DEVICES:
        raise UsageError(f"unknown device {config!r}; expected one of {sorted(DEVICES)}")
    rows, cols, temporal_rows = DEVICES[config]
    spec = compact_cnn_spec(input_rows or rows, cols, num_classes, temporal_rows=temporal_rows, name=f"compact_cnn_{config}")
    return Network.build(spec, seed)


GENERIC_BLOCKS = (3, 3, 3, 1) * 3
GENERIC_FILTERS = 32


def generic_cnn_spec(input_shape, num_classes=15, filters=GENERIC_FILTERS, alpha=DEFAULT_ALPHA) -> NetworkSpec:
    layers = []
    for k in GENERIC_BLOCKS:
        layers += [
            LayerSpec("conv", filter_rows=k, filter_cols=k, out_depth=filters, alpha=alpha),
            LayerSpec("batchnorm"),
            LayerSpec("leaky_relu", alpha=alpha),
        ]
    layers.append(LayerSpec("dense_softmax", out_depth=num_classes))
    rows, cols = input_shape[:2]
    return NetworkSpec(rows, cols, tuple(layers), num_classes, name="generic_cnn")


def build_generic_cnn(input_shape=(30, 8), num_classes=15, seed=0) -> Network:
    """Twelve conv -> batchnorm -> LReLU blocks (3x3,3x3,3x3,1x1 three times), then dense softmax."""
    return Network.build(generic_cnn_spec(input_shape, num_classes), seed)


def fire_layers(network: Network) -> list:
    return [layer for layer in network.layers if isinstance(layer, FireLayer)]


def with_dropout(spec: NetworkSpec, rate: float) -> NetworkSpec:
    """Copy of ``spec`` with every dropout layer set to ``rate``."""
    layers = tuple(replace(l, rate=rate) if l.kind == "dropout" else l for l in spec.layers)
    return replace(spec, layers=layers)


# --------------------------------------------------------------------------
# Functional views of single layers
# --------------------------------------------------------------------------


@dataclass
class FireParams:
    squeeze: FilterBank
    expand_1x1: FilterBank
    expand_temporal: FilterBank
    alpha: float = DEFAULT_ALPHA


def temporal_fire_forward(x, params: FireParams) -> np.ndarray:
    """Fire module on a ``(time, channels, depth)`` volume or batch thereof."""
    for bank in (params.squeeze, params.expand_1x1, params.expand_temporal):
        if bank.filter_cols != 1:
            raise SpecError("fire module filters may not span more than one channel")
    if params.expand_1x1.out_depth != params.expand_temporal.out_depth:
        raise SpecError("fire expand halves must have equal depth")
    s = leaky_relu(conv2d(x, params.squeeze), params.alpha)
    z = np.concatenate([conv2d(s, params.expand_1x1), conv2d(s, params.expand_temporal)], axis=-1)
    return leaky_relu(z, params.alpha)


def spatial_reduction_forward(x, params: FilterBank, alpha=DEFAULT_ALPHA) -> np.ndarray:
    """Valid convolution spanning every channel, followed by LReLU."""
    cols = np.shape(x)[-2]
    if params.filter_cols != cols:
        raise SpecError(f"spatial reduction filter spans {params.filter_cols} cols, input has {cols}")
    return leaky_relu(conv2d(x, params, "valid"), alpha)


def dropout_forward(x, rate, mode="train", rng_seed=None) -> np.ndarray:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` in train mode."""
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x, dtype=float)
    if mode == "infer" or rate == 0.0:
        return x.copy()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    keep = 1.0 - rate
    return x * ((rng.random(x.shape) < keep) / keep)
