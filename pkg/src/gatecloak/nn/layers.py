"""Forward and backward passes for the handful of ops the recognizers need.

Everything is float32, NHWC, valid padding, and written against numpy GEMM.
Convolutions go through an im2col buffer that is chunked over output rows so
the full-canvas layers never materialize a multi-hundred-MB patch matrix.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

F32 = np.float32


class ShapeMismatch(ValueError):
    pass


class RateOutOfRange(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class TargetOutOfRange(ValueError):
    pass


class NonFiniteTensor(ArithmeticError):
    pass


def ensure_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteTensor(f"{name} contains NaN or Inf")


_CHUNK_BYTES = 64 << 20


def _row_chunks(out_rows: int, out_cols: int, patch_len: int):
    rows = max(1, _CHUNK_BYTES // max(1, out_cols * patch_len * 4))
    for r0 in range(0, out_rows, rows):
        yield r0, min(out_rows, r0 + rows)


def _patch_rows(x: np.ndarray, r0: int, r1: int) -> np.ndarray:
    """im2col rows r0:r1 of x, flattened as (kh, kw, c) to match kernel layout."""
    win = sliding_window_view(x, (3, 3), axis=(1, 2))
    seg = win[:, r0:r1].transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(seg, dtype=F32)


def conv2d_forward(x, w, b, relu: bool = True):
    """3x3 valid-padding stride-1 convolution, optionally with fused ReLU."""
    if x.ndim != 4:
        raise ShapeMismatch(f"conv input must be NHWC, got {x.shape}")
    if w.ndim != 4 or w.shape[:2] != (3, 3):
        raise ShapeMismatch(f"kernel must be 3x3xCxF, got {w.shape}")
    n, h, wd, c = x.shape
    if w.shape[2] != c or b.shape != (w.shape[3],):
        raise ShapeMismatch(f"kernel {w.shape}/bias {b.shape} vs input channels {c}")
    if h < 3 or wd < 3:
        raise ShapeMismatch(f"spatial dims {h}x{wd} too small for a 3x3 kernel")
    oh, ow, f = h - 2, wd - 2, w.shape[3]
    wmat = w.reshape(9 * c, f)
    y = np.empty((n, oh, ow, f), F32)
    for r0, r1 in _row_chunks(oh, ow, 9 * c):
        p = _patch_rows(x, r0, r1).reshape(n * (r1 - r0) * ow, 9 * c)
        y[:, r0:r1] = (p @ wmat).reshape(n, r1 - r0, ow, f)
    y += b
    if relu:
        np.maximum(y, 0.0, out=y)
    return y, (x, w, relu, y if relu else None)


def conv2d_backward(dy, cache, need_param_grads: bool = True):
    x, w, relu, post = cache
    n, h, wd, c = x.shape
    oh, ow, f = h - 2, wd - 2, w.shape[3]
    if dy.shape != (n, oh, ow, f):
        raise ShapeMismatch(f"dy {dy.shape} vs expected {(n, oh, ow, f)}")
    # consumes dy when relu is fused (in-place mask keeps peak memory down)
    dpre = np.multiply(dy, post > 0, out=dy) if relu else dy
    dw = db = None
    if need_param_grads:
        db = dpre.sum(axis=(0, 1, 2), dtype=F32)
        dwm = np.zeros((9 * c, f), F32)
        for r0, r1 in _row_chunks(oh, ow, 9 * c):
            p = _patch_rows(x, r0, r1).reshape(-1, 9 * c)
            dwm += p.T @ dpre[:, r0:r1].reshape(-1, f)
        dw = dwm.reshape(3, 3, c, f)
    # dx is the full correlation of dpre with the 180-degree-rotated kernel
    pad = np.zeros((n, oh + 4, ow + 4, f), F32)
    pad[:, 2:-2, 2:-2] = dpre
    wrot = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    wmat = wrot.reshape(9 * f, c)
    dx = np.empty((n, h, wd, c), F32)
    for r0, r1 in _row_chunks(h, wd, 9 * f):
        p = _patch_rows(pad, r0, r1).reshape(-1, 9 * f)
        dx[:, r0:r1] = (p @ wmat).reshape(n, r1 - r0, wd, c)
    return dx, dw, db


def maxpool_forward(x):
    """3x3 window, stride 3, floor semantics; trailing rows/cols are dropped."""
    if x.ndim != 4:
        raise ShapeMismatch(f"pool input must be NHWC, got {x.shape}")
    n, h, w, c = x.shape
    if h < 3 or w < 3:
        raise ShapeMismatch(f"spatial dims {h}x{w} too small for 3x3 pooling")
    oh, ow = h // 3, w // 3
    crop = x[:, :oh * 3, :ow * 3]
    win = (crop.reshape(n, oh, 3, ow, 3, c)
               .transpose(0, 1, 3, 5, 2, 4)
               .reshape(n, oh, ow, c, 9))
    idx = win.argmax(axis=4)
    return win.max(axis=4), (x.shape, idx)


def maxpool_backward(dy, cache):
    (n, h, w, c), idx = cache
    oh, ow = h // 3, w // 3
    if dy.shape != (n, oh, ow, c):
        raise ShapeMismatch(f"dy {dy.shape} vs expected {(n, oh, ow, c)}")
    flat = np.zeros((n, oh, ow, c, 9), F32)
    np.put_along_axis(flat, idx[..., None], dy[..., None].astype(F32), axis=4)
    dcrop = (flat.reshape(n, oh, ow, c, 3, 3)
                 .transpose(0, 1, 4, 2, 5, 3)
                 .reshape(n, oh * 3, ow * 3, c))
    dx = np.zeros((n, h, w, c), F32)
    dx[:, :oh * 3, :ow * 3] = dcrop
    return dx


def dropout_forward(x, rate: float, training: bool, rng=None):
    if not 0.0 < rate < 1.0:
        raise RateOutOfRange(f"dropout rate {rate} not in (0, 1)")
    if not training:
        return x, None
    keep = rng.random(x.shape, dtype=F32) >= rate
    scaled = keep.astype(F32) / F32(1.0 - rate)
    return x * scaled, scaled


def dropout_backward(dy, cache):
    if cache is None:
        return dy
    return dy * cache


def flatten_forward(x):
    return np.ascontiguousarray(x.reshape(x.shape[0], -1)), x.shape


def flatten_backward(dy, cache):
    return dy.reshape(cache)


def dense_forward(x, w, b, relu: bool):
    if x.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense input {x.shape} vs weights {w.shape}")
    y = x @ w + b
    if relu:
        np.maximum(y, 0.0, out=y)
    return y, (x, w, relu, y if relu else None)


def dense_backward(dy, cache, need_param_grads: bool = True):
    x, w, relu, post = cache
    if dy.shape != (x.shape[0], w.shape[1]):
        raise ShapeMismatch(f"dy {dy.shape} vs expected {(x.shape[0], w.shape[1])}")
    # consumes dy when relu is fused (in-place mask keeps peak memory down)
    dpre = np.multiply(dy, post > 0, out=dy) if relu else dy
    dw = db = None
    if need_param_grads:
        dw = x.T @ dpre
        db = dpre.sum(axis=0, dtype=F32)
    dx = dpre @ w.T
    return dx, dw, db


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z, dtype=F32)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Per-sample gradient is softmax(logits) - onehot(label); the returned array
    carries the 1/N batch-mean factor.
    """
    if logits.ndim != 2:
        raise ShapeMismatch(f"logits must be 2-d, got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels {labels.shape} vs batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels outside [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z, dtype=F32).sum(axis=1, dtype=F32))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= F32(1.0)
    grad /= F32(n)
    return loss, grad
