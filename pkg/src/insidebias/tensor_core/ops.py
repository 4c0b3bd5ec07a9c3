"""Numeric kernels.

Batched kernels work on ``(N, H, W, C)`` arrays and return whatever the
matching backward pass needs as a cache. The single-sample functions at the
bottom (``conv2d``, ``apply_activation``) take and return :class:`Tensor`
objects in ``[maps, h, w]`` layout.
"""
from __future__ import annotations

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError
from .tensor import ConvFilterBank, Tensor, check_finite


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Rows are output pixels, columns are ``(i, j, c)`` patch entries."""
    n, h, w, c = x.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise DimensionError(f"input {h}x{w} too small for {kh}x{kw} kernel with padding {padding}")
    xp = _pad(x, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (n, H', W', c, kh, kw)
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)


@numba.njit(cache=True)
def _col2im_kernel(cols, dx, kh, kw, stride, pad):
    n, oh, ow = cols.shape[0], cols.shape[1], cols.shape[2]
    h, w, c = dx.shape[1], dx.shape[2], dx.shape[3]
    for b in range(n):
        for y in range(oh):
            for x in range(ow):
                for i in range(kh):
                    yy = y * stride + i - pad
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(kw):
                        xx = x * stride + j - pad
                        if xx < 0 or xx >= w:
                            continue
                        for ch in range(c):
                            dx[b, yy, xx, ch] += cols[b, y, x, i, j, ch]


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add patch gradients back onto the (unpadded) input grid."""
    n, h, w, c = x_shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    _col2im_kernel(np.ascontiguousarray(cols).reshape(n, oh, ow, kh, kw, c), dx, kh, kw, stride, padding)
    return dx


def _wmat(weight: np.ndarray) -> np.ndarray:
    # (Cout, Cin, kh, kw) -> (Cout, kh*kw*Cin), matching im2col column order
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    """Cross-correlation of ``x`` (N,H,W,C) with ``weight`` (Cout,Cin,kh,kw)."""
    n, h, w, c = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise DimensionError(f"input has {c} feature maps but filters expect {cin}")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if kh == 1 and kw == 1 and padding == 0:
        xs = x[:, ::stride, ::stride, :][:, :oh, :ow]
        cols = np.ascontiguousarray(xs).reshape(-1, c)
    else:
        cols = im2col(x, kh, kw, stride, padding)
    out = cols @ _wmat(weight).T
    out += bias
    return out.reshape(n, oh, ow, cout), cols


def conv2d_backward(dout, cols, x_shape, weight, stride=1, padding=0, need_dx=True):
    cout, cin, kh, kw = weight.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).T.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        dcols = d2 @ _wmat(weight)
        if kh == 1 and kw == 1 and padding == 0:
            n, h, w, c = x_shape
            oh, ow = dout.shape[1:3]
            dx = np.zeros(x_shape, dtype=dout.dtype)
            dx[:, ::stride, ::stride, :][:, :oh, :ow] = dcols.reshape(n, oh, ow, c)
        else:
            dx = col2im(dcols, x_shape, kh, kw, stride, padding)
    return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0, dtype=x.dtype)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def maxpool2x2_forward(x):
    """2x2 / stride 2 max pooling; odd trailing rows and columns are dropped."""
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"cannot 2x2-pool a {h}x{w} map")
    h2, w2 = h // 2, w // 2
    xc = x[:, : 2 * h2, : 2 * w2, :]
    blocks = xc.reshape(n, h2, 2, w2, 2, c)
    out = blocks.max(axis=(2, 4))
    return out


def maxpool2x2_backward(dout, x, out):
    n, h, w, c = x.shape
    h2, w2 = out.shape[1:3]
    blocks = x[:, : 2 * h2, : 2 * w2, :].reshape(n, h2, 2, w2, 2, c)
    # tied maxima each receive the gradient; after a ReLU the only practical
    # ties are all-zero windows, whose gradient the ReLU mask discards anyway
    mask = blocks == out[:, :, None, :, None, :]
    dx = np.zeros_like(x)
    dx[:, : 2 * h2, : 2 * w2, :] = (mask * dout[:, :, None, :, None, :]).reshape(n, 2 * h2, 2 * w2, c)
    return dx


# single-sample API, [maps, h, w] layout

def conv2d(input: Tensor, bank: ConvFilterBank) -> Tensor:
    """Pre-activation convolution of one ``[m_in, h, w]`` input."""
    x = np.asarray(input.data if isinstance(input, Tensor) else input)
    if x.ndim != 3:
        raise DimensionError(f"conv2d expects [m_in, h, w], got shape {x.shape}")
    check_finite(x, "conv2d input")
    if x.shape[0] != bank.m_in:
        raise DimensionError(f"input has {x.shape[0]} feature maps, bank expects {bank.m_in}")
    kh, kw = bank.kernel
    if x.shape[1] + 2 * bank.padding < kh or x.shape[2] + 2 * bank.padding < kw:
        raise DimensionError(f"input {x.shape[1]}x{x.shape[2]} smaller than {kh}x{kw} kernel")
    dtype = bank.filters.dtype
    nhwc = np.ascontiguousarray(x.transpose(1, 2, 0), dtype=dtype)[None]
    out, _ = conv2d_forward(nhwc, bank.filters.data, bank.bias.data, bank.stride, bank.padding)
    return Tensor(out[0].transpose(2, 0, 1))


def apply_activation(x: Tensor, kind: str) -> Tensor:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x)
    check_finite(arr, "activation input")
    if kind == "relu":
        return Tensor(relu(arr))
    if kind == "softmax":
        return Tensor(softmax(arr.astype(np.float64)).astype(arr.dtype))
    raise ConfigurationError(f"unknown activation {kind!r}")
