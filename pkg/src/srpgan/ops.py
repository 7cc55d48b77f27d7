"""Differentiable operators on NCHW arrays.

Every forward has a matching ``*_backward`` that maps the upstream gradient
to gradients of the inputs (and parameters). Operators compute in the dtype
of their input, so the same code serves float32 training and float64
gradient checks.

Convolutions use an im2col layout: patches are gathered into a
``(C*k*k, N*Ho*Wo)`` matrix so the heavy lifting is one GEMM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .tensor import ShapeError

CONV_KERNEL = 3
CONV_PAD = 1
TCONV_KERNEL = 4
TCONV_STRIDE = 2
TCONV_PAD = 1
DEFAULT_SLOPE = 0.2
DEFAULT_IN_EPS = 1e-5


@dataclass
class Conv2dSpec:
    """3x3 zero-padded convolution; weight (C_out, C_in, 3, 3), bias (C_out,)."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.weight.ndim != 4 or self.weight.shape[2:] != (CONV_KERNEL, CONV_KERNEL):
            raise ShapeError(f"conv weight must be (C_out, C_in, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias {self.bias.shape} does not match weight {self.weight.shape}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def out_size(self, h: int, w: int) -> tuple:
        s = self.stride
        return (h + 2 * CONV_PAD - CONV_KERNEL) // s + 1, (w + 2 * CONV_PAD - CONV_KERNEL) // s + 1


@dataclass
class TConv2dSpec:
    """4x4 stride-2 pad-1 transposed convolution; weight (C_in, C_out, 4, 4)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2:] != (TCONV_KERNEL, TCONV_KERNEL):
            raise ShapeError(f"tconv weight must be (C_in, C_out, 4, 4), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"bias {self.bias.shape} does not match weight {self.weight.shape}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1]


def _check_input(x: np.ndarray, channels: int, what: str, weight_shape) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects NCHW input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(
            f"{what}: input shape {x.shape} has {x.shape[1]} channels, "
            f"weight shape {tuple(weight_shape)} expects {channels}"
        )


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Gather k x k patches of zero-padded ``x`` (N, C, H, W).

    Returns ``(C*k*k, N*Ho*Wo)``; rows are ordered (c, u, v), columns (n, i, j).
    """
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    hspan = (ho - 1) * stride + 1
    wspan = (wo - 1) * stride + 1
    xp = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, u, v] = xp[:, :, u:u + hspan:stride, v:v + wspan:stride]
    return cols.reshape(c * k * k, n * ho * wo)


def col2im(cols: np.ndarray, out_shape, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of ``im2col``: scatter-add (C, k, k, N, Ho, Wo) patches onto (N, C, H, W)."""
    c, _, _, n, ho, wo = cols.shape
    h, w = out_shape
    hp = max(h + 2 * pad, (ho - 1) * stride + k)
    wp = max(w + 2 * pad, (wo - 1) * stride + k)
    buf = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    hspan = (ho - 1) * stride + 1
    wspan = (wo - 1) * stride + 1
    for u in range(k):
        for v in range(k):
            buf[:, :, u:u + hspan:stride, v:v + wspan:stride] += cols[:, u, v]
    return np.ascontiguousarray(buf[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3))


def conv2d_cached(x: np.ndarray, spec: Conv2dSpec):
    """Forward conv returning ``(out, cols)``; ``cols`` feeds the backward pass."""
    _check_input(x, spec.in_channels, "conv2d", spec.weight.shape)
    n, _, h, w = x.shape
    ho, wo = spec.out_size(h, w)
    cols = im2col(x, CONV_KERNEL, spec.stride, CONV_PAD)
    out = spec.weight.reshape(spec.out_channels, -1) @ cols
    out += spec.bias[:, None]
    out = out.reshape(spec.out_channels, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def conv2d(x: np.ndarray, spec: Conv2dSpec) -> np.ndarray:
    return conv2d_cached(x, spec)[0]


def conv2d_backward(dout: np.ndarray, x: np.ndarray, spec: Conv2dSpec, cols=None):
    """Returns ``(dx, dweight, dbias)``."""
    if cols is None:
        cols = im2col(x, CONV_KERNEL, spec.stride, CONV_PAD)
    n, ci = x.shape[:2]
    co = spec.out_channels
    ho, wo = dout.shape[2:]
    d = dout.transpose(1, 0, 2, 3).reshape(co, -1)
    wmat = spec.weight.reshape(co, -1)
    dw = (d @ cols.T).reshape(spec.weight.shape)
    db = d.sum(axis=1)
    dcols = (wmat.T @ d).reshape(ci, CONV_KERNEL, CONV_KERNEL, n, ho, wo)
    dx = col2im(dcols, x.shape[2:], CONV_KERNEL, spec.stride, CONV_PAD)
    return dx, dw, db


def conv2d_transpose(x: np.ndarray, spec: TConv2dSpec) -> np.ndarray:
    """Adjoint of a stride-2, pad-1, 4x4 convolution: doubles H and W."""
    _check_input(x, spec.in_channels, "conv2d_transpose", spec.weight.shape)
    n, ci, h, w = x.shape
    co = spec.out_channels
    xr = x.transpose(1, 0, 2, 3).reshape(ci, -1)
    cols = (spec.weight.reshape(ci, -1).T @ xr).reshape(co, TCONV_KERNEL, TCONV_KERNEL, n, h, w)
    out = col2im(cols, (2 * h, 2 * w), TCONV_KERNEL, TCONV_STRIDE, TCONV_PAD)
    out += spec.bias.reshape(1, co, 1, 1)
    return out


def conv2d_transpose_backward(dout: np.ndarray, x: np.ndarray, spec: TConv2dSpec):
    """Returns ``(dx, dweight, dbias)``."""
    n, ci, h, w = x.shape
    dcols = im2col(dout, TCONV_KERNEL, TCONV_STRIDE, TCONV_PAD)
    wmat = spec.weight.reshape(ci, -1)
    dx = (wmat @ dcols).reshape(ci, n, h, w).transpose(1, 0, 2, 3)
    xr = x.transpose(1, 0, 2, 3).reshape(ci, -1)
    dw = (xr @ dcols.T).reshape(spec.weight.shape)
    db = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), dw, db


def instance_norm_cached(x: np.ndarray, eps: float = DEFAULT_IN_EPS):
    """Per-(image, channel) spatial standardization without affine terms.

    Returns ``(y, (xhat, inv_std))``. Moments are accumulated in float64.
    """
    if eps <= 0:
        raise ValueError(f"instance_norm eps must be > 0, got {eps}")
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects NCHW input, got shape {x.shape}")
    x64 = x.astype(np.float64, copy=False)
    mean = x64.mean(axis=(2, 3), keepdims=True)
    var = ((x64 - mean) ** 2).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = ((x64 - mean) * inv_std).astype(x.dtype)
    return y, (y, inv_std.astype(x.dtype))


def instance_norm(x: np.ndarray, eps: float = DEFAULT_IN_EPS) -> np.ndarray:
    return instance_norm_cached(x, eps)[0]


def instance_norm_backward(dout: np.ndarray, cache) -> np.ndarray:
    xhat, inv_std = cache
    dmean = dout.mean(axis=(2, 3), keepdims=True)
    dproj = (dout * xhat).mean(axis=(2, 3), keepdims=True)
    return inv_std * (dout - dmean - xhat * dproj)


def leaky_relu(x: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    if not 0 <= slope < 1:
        raise ValueError(f"LeakyReLU slope must be in [0, 1), got {slope}")
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(dout: np.ndarray, x: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    # x == 0 takes the negative-side slope
    return np.where(x > 0, dout, dout * dout.dtype.type(slope))


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate channels of {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(t: np.ndarray, c_first: int):
    """Inverse of ``concat_channels``; also the gradient split."""
    return t[:, :c_first], t[:, c_first:]


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid_backward(dout: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dout * y * (1 - y)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log(sigmoid(x)) as -softplus(-x); log(1 - sigmoid(x)) is log_sigmoid(-x)."""
    return -np.logaddexp(0, -x)


def log_sigmoid_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * expit(-x)
