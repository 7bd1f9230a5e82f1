"""Discrete wavelet transform and marginal (mDWT) features.

Filters follow the usual orthogonal-wavelet conventions: ``rec_lo`` is the
Daubechies scaling filter, ``dec_lo`` its reverse, and the high-pass pair
is the quadrature mirror.  One analysis step is

    out[i] = sum_j f[j] * x_ext[2 i + 1 - j]

which is a full convolution sampled at odd positions.  ``symmetric`` mode
extends the signal by half-sample mirroring and yields
``floor((N + L - 1) / 2)`` coefficients; ``periodization`` wraps it and
yields ``N / 2``, giving an orthonormal transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import UsageError

FAMILIES = ("haar", "db7")
MODES = ("symmetric", "periodization")


@lru_cache(maxsize=None)
def daubechies_scaling(n_moments: int) -> np.ndarray:
    """Minimum-phase Daubechies scaling filter with ``n_moments`` vanishing moments.

    Built by spectral factorisation: the roots of the Daubechies polynomial in
    ``y = sin^2(w/2)`` are mapped to ``z`` and the ones inside the unit circle
    are kept, then multiplied by ``(1 + z)^N``.  Normalised to sum ``sqrt(2)``.
    """
    if n_moments < 1:
        raise UsageError("need at least one vanishing moment")
    if n_moments == 1:
        return np.array([1.0, 1.0]) / np.sqrt(2.0)
    n = n_moments
    coeffs = [comb(n - 1 + k, k) for k in range(n)]
    y_roots = np.roots(coeffs[::-1])
    z_roots = []
    for y in y_roots:
        # (2 - z - 1/z) / 4 = y  <=>  z^2 - (2 - 4y) z + 1 = 0
        pair = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        z_roots.append(pair[np.argmin(np.abs(pair))])
    poly = np.real(np.poly(np.concatenate([-np.ones(n), z_roots])))
    h = poly / poly.sum() * np.sqrt(2.0)
    return h[::-1] if abs(h[0]) < abs(h[-1]) else h


@dataclass(frozen=True)
class Wavelet:
    name: str
    rec_lo: np.ndarray

    @property
    def dec_lo(self):
        return self.rec_lo[::-1]

    @property
    def rec_hi(self):
        signs = (-1.0) ** np.arange(len(self.rec_lo))
        return signs * self.rec_lo[::-1]

    @property
    def dec_hi(self):
        return self.rec_hi[::-1]

    @property
    def length(self):
        return len(self.rec_lo)


def wavelet(family: str) -> Wavelet:
    if family == "haar":
        return Wavelet("haar", daubechies_scaling(1))
    if family.startswith("db") and family[2:].isdigit():
        return Wavelet(family, daubechies_scaling(int(family[2:])))
    raise UsageError(f"unknown wavelet family {family!r}; expected one of {FAMILIES}")


@dataclass(frozen=True)
class WaveletSpec:
    family: str = "db7"
    decomposition_levels: int = 3
    mode: str = "symmetric"

    def __post_init__(self):
        wavelet(self.family)
        if self.decomposition_levels < 1:
            raise UsageError("decomposition_levels must be >= 1")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def min_length(self) -> int:
        return wavelet(self.family).length * 2 ** (self.decomposition_levels - 1)


@dataclass
class Decomposition:
    details: list  # level 1 first
    approximation: np.ndarray

    def bands(self) -> list:
        return [*self.details, self.approximation]


def _analysis(x, filt, mode):
    """One filter-and-decimate pass along the last axis of ``x``."""
    taps = len(filt)
    pad = [(0, 0)] * (x.ndim - 1)
    if mode == "symmetric":
        xe = np.pad(x, pad + [(taps - 1, taps - 1)], mode="symmetric")
        full = sliding_window_view(xe, taps, axis=-1) @ filt[::-1]
        return full[..., 1::2]
    n = x.shape[-1]
    xe = np.pad(x, pad + [(taps - 1, 0)], mode="wrap")
    full = sliding_window_view(xe, taps, axis=-1) @ filt[::-1]
    return full[..., 1:n:2]


def dwt_decompose(signal, spec: WaveletSpec = WaveletSpec()) -> Decomposition:
    """Cascade decomposition along the last axis.

    ``signal`` may carry leading axes (channels, windows); each 1-D slice is
    transformed independently.
    """
    x = np.asarray(signal, dtype=float)
    n = x.shape[-1]
    if n < spec.min_length:
        raise UsageError(
            f"signal of length {n} too short for {spec.decomposition_levels} levels of {spec.family}; "
            f"minimum length is {spec.min_length}"
        )
    if spec.mode == "periodization" and n % 2 ** spec.decomposition_levels:
        raise UsageError(f"periodization needs length divisible by {2 ** spec.decomposition_levels}, got {n}")
    w = wavelet(spec.family)
    details = []
    approx = x
    for _ in range(spec.decomposition_levels):
        details.append(_analysis(approx, w.dec_hi, spec.mode))
        approx = _analysis(approx, w.dec_lo, spec.mode)
    return Decomposition(details, approx)


def mdwt_features(window, spec: WaveletSpec = WaveletSpec()) -> np.ndarray:
    """Sum of absolute coefficients per band for every channel.

    ``window`` is ``(n_s, n_c)`` or a batch ``(n, n_s, n_c)``.  The result
    has ``n_c * (levels + 1)`` entries laid out channel by channel as
    ``[detail 1, ..., detail L, approximation L]``.
    """
    x = np.asarray(window, dtype=float)
    if x.ndim not in (2, 3):
        raise UsageError(f"window must be (n_s, n_c) or (n, n_s, n_c), got shape {x.shape}")
    dec = dwt_decompose(np.swapaxes(x, -1, -2), spec)
    marg = np.stack([np.abs(b).sum(axis=-1) for b in dec.bands()], axis=-1)
    return marg.reshape(*marg.shape[:-2], -1)


def feature_names(channels, spec: WaveletSpec = WaveletSpec()) -> list:
    bands = [f"d{k}" for k in range(1, spec.decomposition_levels + 1)] + [f"a{spec.decomposition_levels}"]
    return [f"ch{c}_{b}" for c in range(channels) for b in bands]
