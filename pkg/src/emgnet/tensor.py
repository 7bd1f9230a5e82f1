"""Convolution and dense primitives on rank-3 activation volumes.

A tensor here is a plain ``numpy.ndarray`` shaped ``(rows, cols, depth)``;
every function also accepts a leading batch axis ``(n, rows, cols, depth)``
and returns the result with the same rank it was given.

Convolution is the cross-correlation form with stride 1.  In ``same`` mode
output unit ``(r, c)`` reads input rows ``r - ceil(R/2) + 1 .. r - ceil(R/2) + R``
(zero-based), i.e. ``ceil(R/2) - 1`` rows of zero padding above and the rest
below.  Odd filters are centred; even filters lean one row downwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError, UsageError

PADDINGS = ("same", "valid")


@dataclass
class FilterBank:
    """Weights ``(filter_rows, filter_cols, in_depth, out_depth)`` plus one bias per map."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.weights.ndim != 4:
            raise ShapeError(f"filter weights must be rank 4, got shape {self.weights.shape}")
        if self.biases.shape != (self.out_depth,):
            raise ShapeError(
                f"biases: expected length out_depth={self.out_depth}, got shape {self.biases.shape}"
            )

    @property
    def filter_rows(self) -> int:
        return self.weights.shape[0]

    @property
    def filter_cols(self) -> int:
        return self.weights.shape[1]

    @property
    def in_depth(self) -> int:
        return self.weights.shape[2]

    @property
    def out_depth(self) -> int:
        return self.weights.shape[3]

    @property
    def size(self) -> int:
        return self.weights.size + self.biases.size

    @classmethod
    def zeros(cls, filter_rows, filter_cols, in_depth, out_depth):
        return cls(np.zeros((filter_rows, filter_cols, in_depth, out_depth)), np.zeros(out_depth))


def tensor(data, rows=None, cols=None, depth=None) -> np.ndarray:
    """Build a validated ``(rows, cols, depth)`` array.

    With explicit dimensions ``data`` is read as a flat row-major sequence.
    """
    arr = np.asarray(data, dtype=float)
    if rows is not None:
        if arr.size != rows * cols * depth:
            raise ShapeError(
                f"data length {arr.size} != rows*cols*depth = {rows}*{cols}*{depth}"
            )
        arr = arr.reshape(rows, cols, depth)
    if arr.ndim != 3:
        raise ShapeError(f"tensor must be rank 3 (rows, cols, depth), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
    return arr


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (rows, cols, depth) or (n, rows, cols, depth), got shape {x.shape}")


def same_padding(size: int) -> tuple[int, int]:
    """Zero rows added (before, after) along an axis for a filter of ``size`` taps."""
    before = math.ceil(size / 2) - 1
    return before, size - 1 - before


def _check_conv(x, filters, padding):
    if padding not in PADDINGS:
        raise UsageError(f"padding must be one of {PADDINGS}, got {padding!r}")
    _, rows, cols, depth = x.shape
    if depth != filters.in_depth:
        raise ShapeError(f"depth axis: input depth {depth} != filter in_depth {filters.in_depth}")
    if padding == "valid":
        if rows < filters.filter_rows:
            raise ShapeError(f"rows axis: input rows {rows} < filter rows {filters.filter_rows}")
        if cols < filters.filter_cols:
            raise ShapeError(f"cols axis: input cols {cols} < filter cols {filters.filter_cols}")


def _pad(x, filters, padding):
    if padding == "valid":
        return x
    return np.pad(
        x,
        ((0, 0), same_padding(filters.filter_rows), same_padding(filters.filter_cols), (0, 0)),
    )


def conv_output_shape(rows, cols, filters: FilterBank, padding: str) -> tuple[int, int, int]:
    if padding == "same":
        return rows, cols, filters.out_depth
    return rows - filters.filter_rows + 1, cols - filters.filter_cols + 1, filters.out_depth


def _im2col(xp, rows, cols, out_rows, out_cols):
    """Patches of a padded batch as a ``(n*out_rows*out_cols, rows*cols*depth)`` matrix."""
    n, depth = xp.shape[0], xp.shape[3]
    if rows == 1 and cols == 1:
        return xp.reshape(-1, depth)
    patches = sliding_window_view(xp, (rows, cols), axis=(1, 2))[:, :out_rows, :out_cols]
    # (n, out_rows, out_cols, depth, rows, cols) -> (..., rows, cols, depth)
    return patches.transpose(0, 1, 2, 4, 5, 3).reshape(n * out_rows * out_cols, rows * cols * depth)


def conv2d(x, filters: FilterBank, padding: str = "same") -> np.ndarray:
    """Pre-activation convolution: weighted sum over the filter window plus bias."""
    xb, single = _batched(x)
    _check_conv(xb, filters, padding)
    xp = _pad(xb, filters, padding)
    n = xb.shape[0]
    out_rows, out_cols, out_depth = conv_output_shape(xb.shape[1], xb.shape[2], filters, padding)
    cols = _im2col(xp, filters.filter_rows, filters.filter_cols, out_rows, out_cols)
    out = cols @ filters.weights.reshape(-1, out_depth) + filters.biases
    out = out.reshape(n, out_rows, out_cols, out_depth)
    return out[0] if single else out


def conv2d_backward(x, filters: FilterBank, upstream, padding: str = "same"):
    """Gradients of a scalar loss through :func:`conv2d`.

    Returns ``(input_grad, FilterBank(weight_grad, bias_grad))``.
    """
    xb, single = _batched(x)
    gb, _ = _batched(upstream)
    _check_conv(xb, filters, padding)
    expected = (xb.shape[0],) + conv_output_shape(xb.shape[1], xb.shape[2], filters, padding)
    if gb.shape != expected:
        raise ShapeError(f"upstream gradient shape {gb.shape} != conv output shape {expected}")
    xp = _pad(xb, filters, padding)
    rows, cols_, depth = filters.filter_rows, filters.filter_cols, filters.in_depth
    n, out_rows, out_cols, out_depth = gb.shape
    g2 = gb.reshape(-1, out_depth)
    w2 = filters.weights.reshape(-1, out_depth)
    patches = _im2col(xp, rows, cols_, out_rows, out_cols)
    dw = (patches.T @ g2).reshape(filters.weights.shape)
    db = g2.sum(axis=0)
    dcols = g2 @ w2.T
    if rows == 1 and cols_ == 1:
        dxp = dcols.reshape(xp.shape)
    else:
        dcols = dcols.reshape(n, out_rows, out_cols, rows, cols_, depth)
        dxp = np.zeros(xp.shape, dtype=dcols.dtype)
        for i in range(rows):
            for j in range(cols_):
                dxp[:, i:i + out_rows, j:j + out_cols, :] += dcols[:, :, :, i, j, :]
    if padding == "same":
        (rt, _), (ct, _) = same_padding(rows), same_padding(cols_)
        dx = dxp[:, rt:rt + xb.shape[1], ct:ct + xb.shape[2], :]
    else:
        dx = dxp
    grads = FilterBank(dw, db)
    return (dx[0] if single else dx), grads


def dense(x, weights, biases) -> np.ndarray:
    """Affine map of the flattened volume: ``flatten(x) @ weights + biases``.

    A rank-3 input gives a vector; a batch gives ``(n, out_size)``.
    """
    xb, single = _batched(x)
    weights = np.asarray(weights)
    flat = xb.reshape(xb.shape[0], -1)
    if weights.ndim != 2 or flat.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"in_size axis: flattened input size {flat.shape[1]} != weight rows {weights.shape[0]}"
        )
    biases = np.asarray(biases)
    if biases.shape != (weights.shape[1],):
        raise ShapeError(f"out_size axis: biases {biases.shape} vs weight cols {weights.shape[1]}")
    out = flat @ weights + biases
    return out[0] if single else out


def dense_backward(x, weights, upstream):
    """Returns ``(input_grad, weight_grad, bias_grad)`` for :func:`dense`."""
    xb, single = _batched(x)
    g = np.atleast_2d(upstream)
    flat = xb.reshape(xb.shape[0], -1)
    if g.shape != (flat.shape[0], weights.shape[1]):
        raise ShapeError(f"upstream gradient shape {g.shape} != dense output {(flat.shape[0], weights.shape[1])}")
    dx = (g @ weights.T).reshape(xb.shape)
    return (dx[0] if single else dx), flat.T @ g, g.sum(axis=0)


def check_finite(arr, what="array"):
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(np.ravel(arr)))[0])
        raise NumericError(f"non-finite value in {what} at flat index {bad}")
    return arr
