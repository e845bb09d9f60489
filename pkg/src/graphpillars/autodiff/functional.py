"""Differentiable operations on :class:`Tensor`.

Elementwise binary ops broadcast numpy-style; their gradients are summed back
to each operand's shape. Reductions that scatter rows into buckets sort each
bucket's contributions by value before summing, so results do not depend on
the order in which rows arrive. ``segment_sum_sorted`` is the exception: it
sums pre-grouped rows in the order given.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_result(a.data ** exponent, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (F_in, F_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


# -- shape ------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take_rows(a, index) -> Tensor:
    """Gather rows ``a[index]`` along the first axis."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return make_result(a.data[index], (a,), backward)


def slice_channels(a, start: int, stop: int) -> Tensor:
    """``a[:, start:stop]`` for tensors laid out (N, C, ...)."""
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return make_result(a.data[:, start:stop], (a,), backward)


# -- reductions -------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- elementwise nonlinearities ----------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    # np.maximum keeps NaN visible instead of clamping it to zero
    return make_result(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return make_result(out, (a,), lambda g: (g * _stable_sigmoid(-x),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# -- bucketed reductions ----------------------------------------------------

def _check_index(index, rows: int, num_buckets: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (rows,):
        raise DimensionError(f"index of shape {index.shape} for {rows} rows")
    if rows and (index.min() < 0 or index.max() >= num_buckets):
        bad = index[(index < 0) | (index >= num_buckets)][0]
        raise IndexError(f"scatter index {bad} out of range for {num_buckets} buckets")
    return index


def _ordered_bucket_sum(x: np.ndarray, index: np.ndarray, num_buckets: int) -> np.ndarray:
    """Per-bucket column sums, accumulated in ascending value order."""
    out = np.zeros((num_buckets,) + x.shape[1:])
    if x.shape[0] == 0:
        return out
    flat = x.reshape(x.shape[0], -1)
    by_value = np.argsort(flat, axis=0, kind="stable")
    buckets = index[by_value]
    order = np.take_along_axis(by_value, np.argsort(buckets, axis=0, kind="stable"), axis=0)
    ordered = np.take_along_axis(flat, order, axis=0)
    sorted_index = np.sort(index)
    starts = np.flatnonzero(np.r_[True, sorted_index[1:] != sorted_index[:-1]])
    sums = np.add.reduceat(ordered, starts, axis=0)
    out.reshape(num_buckets, -1)[sorted_index[starts]] = sums
    return out


def scatter_sum(x, index, num_buckets: int) -> Tensor:
    x = as_tensor(x)
    index = _check_index(index, x.shape[0], num_buckets)
    out = _ordered_bucket_sum(x.data, index, num_buckets)
    return make_result(out, (x,), lambda g: (g[index],))


def segment_sum_sorted(x, index, num_buckets: int) -> Tensor:
    """Bucket sums for rows already grouped by non-decreasing ``index``, in row order."""
    x = as_tensor(x)
    index = _check_index(index, x.shape[0], num_buckets)
    if x.shape[0] and np.any(np.diff(index) < 0):
        raise ValueError("segment_sum_sorted needs a non-decreasing index")
    out = np.zeros((num_buckets,) + x.shape[1:])
    if x.shape[0]:
        starts = np.flatnonzero(np.r_[True, index[1:] != index[:-1]])
        out[index[starts]] = np.add.reduceat(x.data, starts, axis=0)
    return make_result(out, (x,), lambda g: (g[index],))


def scatter_mean(x, index, num_buckets: int) -> Tensor:
    """Average rows sharing a bucket; buckets that receive nothing stay zero."""
    x = as_tensor(x)
    index = _check_index(index, x.shape[0], num_buckets)
    counts = np.bincount(index, minlength=num_buckets).astype(np.float64)
    scale = 1.0 / np.maximum(counts, 1.0)
    scale = scale.reshape((-1,) + (1,) * (x.ndim - 1))
    out = _ordered_bucket_sum(x.data, index, num_buckets) * scale
    return make_result(out, (x,), lambda g: ((g * scale)[index],))


def segment_max(x, index, num_buckets: int) -> Tensor:
    """Column-wise max of rows per bucket; empty buckets yield zeros.

    The gradient of each output entry flows to the lowest-indexed row
    attaining the maximum.
    """
    x = as_tensor(x)
    index = _check_index(index, x.shape[0], num_buckets)
    if x.ndim != 2:
        raise DimensionError(f"segment_max expects a 2-D input, got {x.shape}")
    rows, cols = x.shape
    peak = np.full((num_buckets, cols), -np.inf)
    np.maximum.at(peak, index, x.data)
    empty = np.isneginf(peak)
    out = np.where(empty, 0.0, peak)
    hit = x.data == peak[index]
    candidate = np.where(hit, np.arange(rows)[:, None], rows)
    winner = np.full((num_buckets, cols), rows)
    np.minimum.at(winner, index, candidate)

    def backward(g):
        gx = np.zeros_like(x.data)
        b, c = np.nonzero(~empty)
        gx[winner[b, c], c] = g[b, c]
        return (gx,)

    return make_result(out, (x,), backward)


def max_pool_rows(x) -> Tensor:
    x = as_tensor(x)
    return reshape(segment_max(x, np.zeros(x.shape[0], dtype=np.int64), 1), (x.shape[1],))


def mean_pool_rows(x) -> Tensor:
    x = as_tensor(x)
    return reshape(scatter_mean(x, np.zeros(x.shape[0], dtype=np.int64), 1), x.shape[1:])


# -- convolution ------------------------------------------------------------

def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0:
        raise ConfigError(
            f"conv2d: kernel {kernel} does not fit input {size} with padding {padding}")
    return span // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) over (N, C, H, W) or (C, H, W)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim == 3:
        return reshape(conv2d(reshape(x, (1,) + x.shape), weight, bias, stride, padding),
                       (weight.shape[0],) + _conv_out_hw(x.shape[1:], weight.shape[-1], stride, padding))
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, wc, kh, kw = weight.shape
    if wc != c_in:
        raise DimensionError(f"conv2d: input channels {c_in} != weight channels {wc}")
    if kh != kw or kh % 2 == 0:
        raise ConfigError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be positive, got {stride}")
    k = kh
    ho, wo = _conv_out_hw((h, w), k, stride, padding)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d: bias {bias.shape} for {c_out} output channels")

    xp = _pad_hw(x.data, padding)
    # columns laid out (C_in, k, k, N, Ho, Wo) so every copy below is a plain strided slice
    cols = np.empty((c_in, k, k, n, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride].transpose(1, 0, 2, 3)
    cols = cols.reshape(c_in * k * k, -1)
    wmat = weight.data.reshape(c_out, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(c_in, k, k, n, ho, wo)
            gxp = np.zeros((c_in, n) + xp.shape[2:])
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            gx = np.ascontiguousarray(gx)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def _conv_out_hw(hw, k, stride, padding) -> tuple[int, int]:
    return conv_output_size(hw[0], k, stride, padding), conv_output_size(hw[1], k, stride, padding)


def upsample2x_nearest(x) -> Tensor:
    """Repeat every spatial element into a 2x2 block; works on (..., H, W)."""
    x = as_tensor(x)
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def backward(g):
        h, w = x.shape[-2:]
        return (g.reshape(g.shape[:-2] + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return make_result(out, (x,), backward)
